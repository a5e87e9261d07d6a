//! Fourth-order plate problem split into two coupled second-order equations.
//!
//! With w = -Δu the problem Δ²u = f, u = Δu = 0 on the boundary of the unit
//! square becomes a pair of Poisson problems linked by a mass term: find w
//! with ∫∇w·∇ψ = ∫fψ and u with ∫∇u·∇φ = ∫wφ. The two fields live on their
//! own meshes, so the mass link is a cross-mesh block. The manufactured
//! solution u = sin(πx)·sin(πy) checks the whole chain.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::assemble::{
    assemble_functional, assemble_matrix, l2_error, BlockSystem, Coeff, FESpace, FeFunction,
    Functional, Operator,
};
use crate::driver::{seconds_since, solve_system, Problem};
use crate::error::Result;
use crate::linalg::{PrecondKind, SolveOptions};
use crate::mesh::{MacroMesh, Mesh};
use crate::report::{ComponentState, StepRecord};
use crate::vtk::write_vtk;

#[derive(Debug, Clone)]
pub struct BiharmonicConfig {
    /// uniform refinement levels of the crossed unit-square macro mesh
    pub levels: usize,
    pub degree: u32,
    /// two independent mesh objects (true) or one shared mesh (false)
    pub multimesh: bool,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for BiharmonicConfig {
    fn default() -> Self {
        BiharmonicConfig {
            levels: 6,
            degree: 1,
            multimesh: true,
            solver_tol: 1e-12,
            solver_max_iter: 20_000,
        }
    }
}

pub fn exact_u(x: [f64; 2]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

fn exact_w(x: [f64; 2]) -> f64 {
    2.0 * PI * PI * exact_u(x)
}

fn load(x: [f64; 2]) -> f64 {
    4.0 * PI.powi(4) * exact_u(x)
}

pub struct Biharmonic {
    cfg: BiharmonicConfig,
    mesh_u: Mesh,
    mesh_w: Option<Mesh>,
    pub u: FeFunction,
    pub w: FeFunction,
    solution: Vec<f64>,
    solved: bool,
    pub last_error: f64,
}

impl Biharmonic {
    pub fn new(cfg: BiharmonicConfig) -> Result<Self> {
        Self::new_on(cfg, Arc::new(MacroMesh::unit_square_cross()))
    }

    /// Builds on a caller-supplied macro triangulation, which must cover the
    /// unit square for the manufactured solution to apply.
    pub fn new_on(cfg: BiharmonicConfig, macro_mesh: Arc<MacroMesh>) -> Result<Self> {
        let mut mesh_u = Mesh::new(macro_mesh);
        for _ in 0..cfg.levels {
            mesh_u.refine_all()?;
        }
        let mesh_w = if cfg.multimesh { Some(mesh_u.clone()) } else { None };
        let space_u = FESpace::new(&mesh_u, cfg.degree)?;
        let space_w = FESpace::new(mesh_w.as_ref().unwrap_or(&mesh_u), cfg.degree)?;
        Ok(Biharmonic {
            cfg,
            mesh_u,
            mesh_w,
            u: FeFunction::zero(space_u),
            w: FeFunction::zero(space_w),
            solution: Vec::new(),
            solved: false,
            last_error: f64::NAN,
        })
    }

    pub fn mesh_u(&self) -> &Mesh {
        &self.mesh_u
    }

    pub fn mesh_w(&self) -> &Mesh {
        self.mesh_w.as_ref().unwrap_or(&self.mesh_u)
    }

    /// Refines the w mesh only, to decouple the two discretizations.
    pub fn refine_w(&mut self) -> Result<()> {
        match &mut self.mesh_w {
            Some(m) => m.refine_all()?,
            None => self.mesh_u.refine_all()?,
        }
        self.w = FeFunction::zero(FESpace::new(self.mesh_w(), self.cfg.degree)?);
        if self.mesh_w.is_none() {
            self.u = FeFunction::zero(FESpace::new(&self.mesh_u, self.cfg.degree)?);
        }
        self.solved = false;
        Ok(())
    }

    pub fn solve(&mut self) -> Result<StepRecord> {
        let t0 = Instant::now();
        let space_u = Arc::clone(&self.u.space);
        let space_w = Arc::clone(&self.w.space);
        let mesh_w: &Mesh = self.mesh_w.as_ref().unwrap_or(&self.mesh_u);
        let mut sys = BlockSystem::new(vec![Arc::clone(&space_u), Arc::clone(&space_w)]);
        sys.add_block(
            0,
            0,
            assemble_matrix(
                &Operator::new().diffusion(Coeff::constant(1.0)),
                &space_u,
                &self.mesh_u,
                &space_u,
                &self.mesh_u,
            )?,
        );
        sys.add_block(
            0,
            1,
            assemble_matrix(
                &Operator::new().mass(Coeff::constant(-1.0)),
                &space_u,
                &self.mesh_u,
                &space_w,
                mesh_w,
            )?,
        );
        sys.add_block(
            1,
            1,
            assemble_matrix(
                &Operator::new().diffusion(Coeff::constant(1.0)),
                &space_w,
                mesh_w,
                &space_w,
                mesh_w,
            )?,
        );
        let mut rhs_w = vec![0.0; space_w.n_dofs()];
        assemble_functional(
            &Functional::new().source(Coeff::position(load)).with_quad_order(6),
            &space_w,
            mesh_w,
            None,
            &mut rhs_w,
        )?;
        sys.add_rhs(1, &rhs_w);
        let walls = [1, 2, 3, 4];
        sys.set_dirichlet(0, &walls, |_| 0.0);
        sys.set_dirichlet(1, &walls, |_| 0.0);
        let assemble_seconds = seconds_since(t0);

        let t1 = Instant::now();
        let (a, b) = sys.finalize();
        let outcome = solve_system(
            &a,
            &b,
            &mut self.solution,
            PrecondKind::Ilu0,
            &SolveOptions {
                tol: self.cfg.solver_tol,
                max_iter: self.cfg.solver_max_iter,
                ..Default::default()
            },
        )?;
        let solve_seconds = seconds_since(t1);
        let parts = sys.split(&self.solution);
        self.u.coeffs = parts[0].clone();
        self.w.coeffs = parts[1].clone();
        self.solved = true;
        self.last_error = l2_error(&self.u, &self.mesh_u, exact_u)?;
        let w_err = l2_error(&self.w, self.mesh_w(), exact_w)?;

        Ok(StepRecord {
            step: 1,
            time: 0.0,
            components: vec![
                ComponentState {
                    name: "u".into(),
                    dofs: space_u.n_dofs(),
                    leaves: self.mesh_u.leaf_count(),
                },
                ComponentState {
                    name: "w".into(),
                    dofs: space_w.n_dofs(),
                    leaves: self.mesh_w().leaf_count(),
                },
            ],
            nnz: outcome.nnz,
            solver_iterations: outcome.stats.iterations,
            assemble_seconds,
            solve_seconds,
            adapt_seconds: 0.0,
            extra: vec![("l2_error_u".into(), self.last_error), ("l2_error_w".into(), w_err)],
        })
    }
}

impl Problem for Biharmonic {
    fn name(&self) -> &str {
        "biharmonic"
    }

    fn time(&self) -> f64 {
        0.0
    }

    fn step(&mut self) -> Result<StepRecord> {
        self.solve()
    }

    fn write_fields(&self, dir: &Path, step: usize) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        if self.cfg.multimesh {
            let pu = dir.join(format!("biharmonic_u_{step:04}.vtk"));
            write_vtk(&pu, &self.mesh_u, &[("u", &self.u)])?;
            let pw = dir.join(format!("biharmonic_w_{step:04}.vtk"));
            write_vtk(&pw, self.mesh_w(), &[("w", &self.w)])?;
            out.push(pu);
            out.push(pw);
        } else {
            let p = dir.join(format!("biharmonic_{step:04}.vtk"));
            write_vtk(&p, &self.mesh_u, &[("u", &self.u), ("w", &self.w)])?;
            out.push(p);
        }
        Ok(out)
    }

    fn finished(&self) -> bool {
        self.solved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manufactured_error_decreases_under_refinement() {
        let mut errors = Vec::new();
        for levels in [2usize, 4, 6] {
            let mut p = Biharmonic::new(BiharmonicConfig {
                levels,
                ..Default::default()
            })
            .unwrap();
            p.solve().unwrap();
            errors.push(p.last_error);
        }
        assert!(
            errors[0] > errors[1] && errors[1] > errors[2],
            "errors not decreasing: {errors:?}"
        );
        assert!(errors[2] < 0.05, "finest error too large: {}", errors[2]);
    }

    #[test]
    fn multimesh_and_single_mesh_agree_on_identical_refinements() {
        let mut multi = Biharmonic::new(BiharmonicConfig {
            levels: 4,
            multimesh: true,
            ..Default::default()
        })
        .unwrap();
        multi.solve().unwrap();
        let mut single = Biharmonic::new(BiharmonicConfig {
            levels: 4,
            multimesh: false,
            ..Default::default()
        })
        .unwrap();
        single.solve().unwrap();
        assert_eq!(multi.u.coeffs.len(), single.u.coeffs.len());
        for (a, b) in multi.u.coeffs.iter().zip(&single.u.coeffs) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        for (a, b) in multi.w.coeffs.iter().zip(&single.w.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn independently_refined_w_mesh_still_converges() {
        let mut p = Biharmonic::new(BiharmonicConfig {
            levels: 3,
            ..Default::default()
        })
        .unwrap();
        p.refine_w().unwrap();
        let rec = p.solve().unwrap();
        // the w mesh is strictly finer than the u mesh
        assert!(rec.components[1].leaves > rec.components[0].leaves);
        assert!(p.last_error.is_finite());
        assert!(p.last_error < 0.2);
    }
}
