//! Shared time-stepping machinery: the problem interface, the run loop, and
//! mesh adaptation with solution carry-over.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::adapt::{apply_marks, AdaptStats, EstimatorOptions, Marks, MarkStrategy, TransferSnapshot};
use crate::assemble::{FESpace, FeFunction};
use crate::error::Result;
use crate::linalg::{bicgstab_l, CsrMatrix, Precond, PrecondKind, SolveOptions, SolveStats};
use crate::mesh::Mesh;
use crate::report::{RunLog, StepRecord};

/// Adaptivity settings shared by the demo problems.
#[derive(Debug, Clone, Copy)]
pub struct AdaptOptions {
    pub enabled: bool,
    pub strategy: MarkStrategy,
    pub estimator: EstimatorOptions,
    /// bound on estimate-adapt-resolve rounds within one timestep
    pub max_iterations: usize,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            enabled: true,
            strategy: MarkStrategy::Maximum { theta: 0.5, theta_coarsen: 0.05 },
            estimator: EstimatorOptions::default(),
            max_iterations: 3,
        }
    }
}

/// A time-dependent (or pseudo-time) simulation the runner can drive.
pub trait Problem {
    fn name(&self) -> &str;
    fn time(&self) -> f64;
    /// Advances one step and reports what happened.
    fn step(&mut self) -> Result<StepRecord>;
    /// Writes current fields for visualization, returning the files created.
    fn write_fields(&self, dir: &Path, step: usize) -> Result<Vec<PathBuf>>;
    /// Lets a steady-state problem stop the loop early.
    fn finished(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_steps: usize,
    pub output_dir: Option<PathBuf>,
    /// write fields every this many steps (0 = only at the end)
    pub output_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_steps: 10, output_dir: None, output_every: 0 }
    }
}

/// Steps a problem to completion, collecting the per-step log and writing
/// visualization output along the way.
pub fn run(problem: &mut dyn Problem, opt: &RunOptions) -> Result<RunLog> {
    let mut log = RunLog::new();
    if let Some(dir) = &opt.output_dir {
        std::fs::create_dir_all(dir)?;
        problem.write_fields(dir, 0)?;
    }
    for step in 1..=opt.max_steps {
        let rec = problem.step()?;
        log.push(rec);
        if let Some(dir) = &opt.output_dir {
            if opt.output_every != 0 && step % opt.output_every == 0 {
                problem.write_fields(dir, step)?;
            }
        }
        if problem.finished() {
            break;
        }
    }
    if let Some(dir) = &opt.output_dir {
        let last = log.records().last().map(|r| r.step).unwrap_or(0);
        if opt.output_every == 0 || last % opt.output_every != 0 {
            problem.write_fields(dir, last)?;
        }
    }
    Ok(log)
}

/// Applies marks to one mesh and carries every listed function over to the
/// changed mesh. Functions must all live on `mesh`; those sharing a degree
/// share the rebuilt space.
pub fn adapt_mesh(mesh: &mut Mesh, funcs: &mut [&mut FeFunction], marks: &Marks) -> Result<AdaptStats> {
    if marks.is_empty() {
        return Ok(AdaptStats::default());
    }
    let snaps: Vec<TransferSnapshot> =
        funcs.iter().map(|f| TransferSnapshot::capture(f, mesh)).collect::<Result<_>>()?;
    let stats = apply_marks(mesh, marks)?;
    if stats.refined == 0 && stats.coarsened == 0 {
        return Ok(stats);
    }
    let mut spaces: Vec<(u32, Arc<FESpace>)> = Vec::new();
    for (f, snap) in funcs.iter_mut().zip(&snaps) {
        let deg = f.space.degree();
        let space = match spaces.iter().find(|(d, _)| *d == deg) {
            Some((_, s)) => Arc::clone(s),
            None => {
                let s = FESpace::new(mesh, deg)?;
                spaces.push((deg, Arc::clone(&s)));
                s
            }
        };
        **f = snap.restore(&space, mesh)?;
    }
    Ok(stats)
}

/// Outcome of one linear solve, with the matrix size for the step log.
#[derive(Debug, Clone, Copy)]
pub struct SolveOutcome {
    pub stats: SolveStats,
    pub nnz: usize,
}

/// Preconditioned Krylov solve with a warm start from the previous solution.
pub fn solve_system(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut Vec<f64>,
    kind: PrecondKind,
    opt: &SolveOptions,
) -> Result<SolveOutcome> {
    if x.len() != b.len() {
        x.clear();
        x.resize(b.len(), 0.0);
    }
    let pre = Precond::build(kind, a)?;
    let stats = bicgstab_l(a, b, x, &pre, opt)?;
    Ok(SolveOutcome { stats, nnz: a.nnz() })
}

/// Seconds elapsed since an instant, as f64 for the step log.
pub fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MacroMesh;
    use crate::report::ComponentState;

    struct Counter {
        steps: usize,
        stop_at: usize,
    }

    impl Problem for Counter {
        fn name(&self) -> &str {
            "counter"
        }
        fn time(&self) -> f64 {
            self.steps as f64
        }
        fn step(&mut self) -> Result<StepRecord> {
            self.steps += 1;
            Ok(StepRecord {
                step: self.steps,
                time: self.steps as f64,
                components: vec![ComponentState { name: "u".into(), dofs: 1, leaves: 1 }],
                ..Default::default()
            })
        }
        fn write_fields(&self, _dir: &Path, _step: usize) -> Result<Vec<PathBuf>> {
            Ok(Vec::new())
        }
        fn finished(&self) -> bool {
            self.steps >= self.stop_at
        }
    }

    #[test]
    fn run_honors_early_stop_and_max_steps() {
        let mut p = Counter { steps: 0, stop_at: 3 };
        let log = run(&mut p, &RunOptions { max_steps: 10, ..Default::default() }).unwrap();
        assert_eq!(log.records().len(), 3);

        let mut p = Counter { steps: 0, stop_at: 100 };
        let log = run(&mut p, &RunOptions { max_steps: 5, ..Default::default() }).unwrap();
        assert_eq!(log.records().len(), 5);
    }

    #[test]
    fn adapt_mesh_transfers_all_functions() {
        let mut mesh = Mesh::new(Arc::new(MacroMesh::unit_square_cross()));
        mesh.refine_all().unwrap();
        mesh.refine_all().unwrap();
        let s1 = FESpace::new(&mesh, 1).unwrap();
        let s2 = FESpace::new(&mesh, 2).unwrap();
        let mut a = FeFunction::from_fn(Arc::clone(&s1), |x| x[0] + x[1]);
        let mut b = FeFunction::from_fn(Arc::clone(&s2), |x| x[0] * x[1]);
        let leaves = mesh.leaf_elements();
        let marks = Marks { refine: leaves[..3].iter().map(|l| l.id).collect(), coarsen: vec![] };
        let stats = adapt_mesh(&mut mesh, &mut [&mut a, &mut b], &marks).unwrap();
        assert!(stats.refined > 0);
        a.space.check_current(&mesh).unwrap();
        b.space.check_current(&mesh).unwrap();
        for i in 0..a.space.n_dofs() {
            let [x, y] = a.space.dof_coord(i);
            assert!((a.coeffs[i] - (x + y)).abs() < 1e-12);
        }
        for i in 0..b.space.n_dofs() {
            let [x, y] = b.space.dof_coord(i);
            assert!((b.coeffs[i] - x * y).abs() < 1e-12);
        }
    }
}
