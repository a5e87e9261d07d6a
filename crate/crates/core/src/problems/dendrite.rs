//! Crystal growth into an undercooled melt, with temperature and phase on
//! separate meshes.
//!
//! The phase field φ (+1 solid, -1 liquid) relaxes under fourfold surface
//! anisotropy while the dimensionless temperature u diffuses and absorbs the
//! latent heat 1/2·∂φ/∂t. The interface needs a far finer mesh than the
//! smooth thermal halo, which is the economy this demo measures: it reports
//! degrees of freedom and matrix fill against an equivalent single-mesh
//! discretization built on the union of both refinement trees.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::adapt::{estimate, mark, merge_marks, EstimatorOptions, MarkStrategy, TransferSnapshot};
use crate::assemble::{
    assemble_functional, BlockSystem, Coeff, FESpace, FeFunction, Functional, Operator,
    assemble_matrix,
};
use crate::driver::{adapt_mesh, seconds_since, solve_system, Problem};
use crate::error::{Error, Result};
use crate::linalg::{PrecondKind, SolveOptions};
use crate::mesh::{ElementInfo, MacroMesh, Mesh, TraverseSpec};
use crate::problems::{cap_refinement, union_of};
use crate::report::{BenchRow, BenchTable, ComponentState, StepRecord};
use crate::vtk::write_vtk;

/// Fourfold anisotropy factor as a function of the phase gradient.
fn aniso(g: [f64; 2], strength: f64) -> f64 {
    let p = g[0].powi(4) + g[1].powi(4);
    let n2 = g[0] * g[0] + g[1] * g[1];
    let q = n2 * n2 + 1e-12;
    (1.0 - 3.0 * strength) + 4.0 * strength * p / q
}

/// Partial derivative of the anisotropy factor with respect to one gradient
/// component.
fn aniso_deriv(g: [f64; 2], strength: f64, dir: usize) -> f64 {
    let p = g[0].powi(4) + g[1].powi(4);
    let n2 = g[0] * g[0] + g[1] * g[1];
    let q = n2 * n2 + 1e-12;
    let gi = g[dir];
    4.0 * strength * (4.0 * gi.powi(3) * q - 4.0 * gi * n2 * p) / (q * q)
}

#[derive(Debug, Clone)]
pub struct DendriteConfig {
    /// half-width of the quadrant domain
    pub extent: f64,
    /// dimensionless undercooling of the melt
    pub undercooling: f64,
    /// thermal diffusivity
    pub diffusivity: f64,
    /// anisotropy strength
    pub anisotropy: f64,
    /// phase relaxation time
    pub relax_time: f64,
    pub timestep: f64,
    pub seed_radius: f64,
    pub pre_refine: usize,
    /// both fields on one shared mesh instead of one mesh per field
    pub single_mesh: bool,
    pub max_level: u8,
    pub phi_tolerance: f64,
    pub u_tolerance: f64,
    pub theta_coarsen: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for DendriteConfig {
    fn default() -> Self {
        DendriteConfig {
            extent: 200.0,
            undercooling: 0.65,
            diffusivity: 1.0,
            anisotropy: 0.05,
            relax_time: 1.0,
            timestep: 1.0,
            seed_radius: 10.0,
            pre_refine: 4,
            single_mesh: false,
            max_level: 16,
            phi_tolerance: 40.0,
            u_tolerance: 120.0,
            theta_coarsen: 0.1,
            solver_tol: 1e-10,
            solver_max_iter: 20_000,
        }
    }
}

pub struct Dendrite {
    cfg: DendriteConfig,
    /// thin-interface coupling between undercooling and growth
    coupling: f64,
    mesh_phi: Mesh,
    /// `None` in single-mesh mode: u then lives on the φ mesh
    mesh_u: Option<Mesh>,
    pub phi: FeFunction,
    pub u: FeFunction,
    solution: Vec<f64>,
    step: usize,
    time: f64,
    prev_tip: Option<f64>,
    pub last_nnz: usize,
}

impl Dendrite {
    pub fn new(cfg: DendriteConfig) -> Result<Self> {
        let coupling = cfg.diffusivity / 0.6267;
        let r0 = cfg.seed_radius;
        let phi0 = move |x: [f64; 2]| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            ((r0 - r) / 2f64.sqrt()).tanh()
        };
        let delta = cfg.undercooling;
        let u0 = move |x: [f64; 2]| -delta * (1.0 - phi0(x)) / 2.0;

        let macro_mesh = Arc::new(MacroMesh::square_cross(0.0, 0.0, cfg.extent, cfg.extent));
        let mut mesh_phi = Mesh::new(Arc::clone(&macro_mesh));
        for _ in 0..cfg.pre_refine {
            mesh_phi.refine_all()?;
        }

        let (mesh_u, phi, u) = if cfg.single_mesh {
            Self::adapt_to_initial(&mut mesh_phi, &phi0, cfg.phi_tolerance, cfg.max_level)?;
            let u = Self::adapt_to_initial(&mut mesh_phi, &u0, cfg.u_tolerance, cfg.max_level)?;
            // the u rounds may have refined further, so re-interpolate φ
            let phi = FeFunction::from_fn(Arc::clone(&u.space), &phi0);
            (None, phi, u)
        } else {
            let mut mesh_u = mesh_phi.clone();
            let phi =
                Self::adapt_to_initial(&mut mesh_phi, &phi0, cfg.phi_tolerance, cfg.max_level)?;
            let u = Self::adapt_to_initial(&mut mesh_u, &u0, cfg.u_tolerance, cfg.max_level)?;
            (Some(mesh_u), phi, u)
        };

        Ok(Dendrite {
            cfg,
            coupling,
            mesh_phi,
            mesh_u,
            phi,
            u,
            solution: Vec::new(),
            step: 0,
            time: 0.0,
            prev_tip: None,
            last_nnz: 0,
        })
    }

    /// Refine a mesh until the interpolant of an initial profile passes the
    /// jump estimator, re-interpolating after every round. Elements where
    /// the profile swings by more than a quarter of its global range are
    /// first driven to `max_level` outright: a seed far smaller than the
    /// starting elements must be resolved no matter how forgiving the
    /// run-time tolerance is, or the first solve flattens it away.
    fn adapt_to_initial(
        mesh: &mut Mesh,
        f: &impl Fn([f64; 2]) -> f64,
        tolerance: f64,
        max_level: u8,
    ) -> Result<FeFunction> {
        let sample = |info: &ElementInfo| -> (f64, f64) {
            let c = info.coords;
            let centroid = [
                (c[0][0] + c[1][0] + c[2][0]) / 3.0,
                (c[0][1] + c[1][1] + c[2][1]) / 3.0,
            ];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for x in [c[0], c[1], c[2], centroid] {
                let v = f(x);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let mut range = (f64::INFINITY, f64::NEG_INFINITY);
        mesh.traverse(TraverseSpec::Leaves, |info| {
            let (lo, hi) = sample(info);
            range = (range.0.min(lo), range.1.max(hi));
        });
        let spread = range.1 - range.0;
        for _ in 0..64 {
            let mut steep = Vec::new();
            mesh.traverse(TraverseSpec::Leaves, |info| {
                if info.level < max_level {
                    let (lo, hi) = sample(info);
                    if hi - lo > 0.25 * spread {
                        steep.push(info.id);
                    }
                }
            });
            if steep.is_empty() {
                break;
            }
            for id in steep {
                if mesh.is_leaf(id) {
                    mesh.bisect(id)?;
                }
            }
        }
        let opts = EstimatorOptions::default();
        for _ in 0..32 {
            let space = FESpace::new(mesh, 1)?;
            let func = FeFunction::from_fn(space, f);
            let est = estimate(&func, mesh, None, &opts)?;
            let mut marks = mark(
                &est,
                MarkStrategy::Equidistribution {
                    tolerance,
                    theta_refine: 1.0,
                    theta_coarsen: -1.0,
                },
            );
            cap_refinement(mesh, &mut marks, max_level)?;
            if marks.refine.is_empty() {
                return Ok(func);
            }
            for id in &marks.refine {
                if mesh.is_leaf(*id) {
                    mesh.bisect(*id)?;
                }
            }
        }
        let space = FESpace::new(mesh, 1)?;
        Ok(FeFunction::from_fn(space, f))
    }

    pub fn mesh_phi(&self) -> &Mesh {
        &self.mesh_phi
    }
    pub fn mesh_u(&self) -> &Mesh {
        self.mesh_u.as_ref().unwrap_or(&self.mesh_phi)
    }

    /// Location of the φ = 0 crossing along the positive x axis.
    pub fn tip_position(&self) -> Result<f64> {
        let space = &self.phi.space;
        let mut axis: Vec<(f64, f64)> = Vec::new();
        for d in 0..space.n_dofs() {
            let x = space.dof_coord(d);
            if x[1].abs() < 1e-9 {
                axis.push((x[0], self.phi.coeffs[d as usize]));
            }
        }
        axis.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in axis.windows(2).rev() {
            let (x0, v0) = w[0];
            let (x1, v1) = w[1];
            if v0 >= 0.0 && v1 < 0.0 {
                return Ok(x0 + (x1 - x0) * v0 / (v0 - v1));
            }
        }
        Err(Error::NoCrossing)
    }

    fn assemble_system(&self) -> Result<BlockSystem> {
        let tau = self.cfg.relax_time;
        let dt = self.cfg.timestep;
        let d = self.cfg.diffusivity;
        let eps = self.cfg.anisotropy;
        let lam = self.coupling;
        let sp = Arc::clone(&self.phi.space);
        let su = Arc::clone(&self.u.space);
        let phi_old = &self.phi;
        let u_old = &self.u;
        let mesh_u = self.mesh_u();

        let mut sys = BlockSystem::new(vec![Arc::clone(&sp), Arc::clone(&su)]);
        sys.add_block(
            0,
            0,
            assemble_matrix(
                &Operator::new()
                    .mass(Coeff::data_map(phi_old, move |v, g, _| {
                        let a = aniso(g, eps);
                        tau * a * a / dt - (1.0 - 3.0 * v * v)
                    }))
                    .diffusion(Coeff::data_map(phi_old, move |_, g, _| {
                        let a = aniso(g, eps);
                        a * a
                    })),
                &sp,
                &self.mesh_phi,
                &sp,
                &self.mesh_phi,
            )?,
        );
        sys.add_block(
            0,
            1,
            assemble_matrix(
                &Operator::new().mass(Coeff::data_map(phi_old, move |v, _, _| {
                    lam * (1.0 - v * v).powi(2)
                })),
                &sp,
                &self.mesh_phi,
                &su,
                mesh_u,
            )?,
        );
        sys.add_block(
            1,
            1,
            assemble_matrix(
                &Operator::new()
                    .mass(Coeff::constant(1.0 / dt))
                    .diffusion(Coeff::constant(d)),
                &su,
                mesh_u,
                &su,
                mesh_u,
            )?,
        );
        sys.add_block(
            1,
            0,
            assemble_matrix(
                &Operator::new().mass(Coeff::constant(-0.5 / dt)),
                &su,
                mesh_u,
                &sp,
                &self.mesh_phi,
            )?,
        );

        let mut rhs0 = vec![0.0; sp.n_dofs()];
        assemble_functional(
            &Functional::new()
                .source(Coeff::data_map(phi_old, move |v, g, _| {
                    let a = aniso(g, eps);
                    tau * a * a * v / dt + 2.0 * v.powi(3)
                }))
                .grad_test([
                    Coeff::data_map(phi_old, move |_, g, _| {
                        let n2 = g[0] * g[0] + g[1] * g[1];
                        -n2 * aniso(g, eps) * aniso_deriv(g, eps, 0)
                    }),
                    Coeff::data_map(phi_old, move |_, g, _| {
                        let n2 = g[0] * g[0] + g[1] * g[1];
                        -n2 * aniso(g, eps) * aniso_deriv(g, eps, 1)
                    }),
                ]),
            &sp,
            &self.mesh_phi,
            None,
            &mut rhs0,
        )?;
        sys.add_rhs(0, &rhs0);

        let mut rhs1 = vec![0.0; su.n_dofs()];
        assemble_functional(
            &Functional::new().source(Coeff::data_map(u_old, move |v, _, _| v / dt)),
            &su,
            mesh_u,
            None,
            &mut rhs1,
        )?;
        assemble_functional(
            &Functional::new().source(Coeff::data_map(phi_old, move |v, _, _| -0.5 * v / dt)),
            &su,
            mesh_u,
            Some(&self.mesh_phi),
            &mut rhs1,
        )?;
        sys.add_rhs(1, &rhs1);

        let delta = self.cfg.undercooling;
        sys.set_dirichlet(1, &[2, 3], move |_| -delta);
        Ok(sys)
    }

    fn advance(&mut self) -> Result<StepRecord> {
        self.step += 1;
        self.time += self.cfg.timestep;

        let t0 = Instant::now();
        let sys = self.assemble_system()?;
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
        self.last_nnz = outcome.nnz;
        let solve_seconds = seconds_since(t1);
        let parts = sys.split(&self.solution);
        self.phi.coeffs = parts[0].clone();
        self.u.coeffs = parts[1].clone();

        let t2 = Instant::now();
        let opts = EstimatorOptions::default();
        let strategy_phi = MarkStrategy::Equidistribution {
            tolerance: self.cfg.phi_tolerance,
            theta_refine: 1.0,
            theta_coarsen: self.cfg.theta_coarsen,
        };
        let strategy_u = MarkStrategy::Equidistribution {
            tolerance: self.cfg.u_tolerance,
            theta_refine: 1.0,
            theta_coarsen: self.cfg.theta_coarsen,
        };
        let est_phi = estimate(&self.phi, &self.mesh_phi, None, &opts)?;
        let mut marks_phi = mark(&est_phi, strategy_phi);
        if let Some(mesh_u) = self.mesh_u.as_mut() {
            cap_refinement(&self.mesh_phi, &mut marks_phi, self.cfg.max_level)?;
            adapt_mesh(&mut self.mesh_phi, &mut [&mut self.phi], &marks_phi)?;

            let est_u = estimate(&self.u, mesh_u, None, &opts)?;
            let mut marks_u = mark(&est_u, strategy_u);
            cap_refinement(mesh_u, &mut marks_u, self.cfg.max_level)?;
            adapt_mesh(mesh_u, &mut [&mut self.u], &marks_u)?;
        } else {
            // one mesh serves both fields: take the union of their demands
            let est_u = estimate(&self.u, &self.mesh_phi, None, &opts)?;
            let marks_u = mark(&est_u, strategy_u);
            let mut marks = merge_marks(&[marks_phi, marks_u]);
            cap_refinement(&self.mesh_phi, &mut marks, self.cfg.max_level)?;
            adapt_mesh(&mut self.mesh_phi, &mut [&mut self.phi, &mut self.u], &marks)?;
        }

        self.solution.clear();
        self.solution.extend_from_slice(&self.phi.coeffs);
        self.solution.extend_from_slice(&self.u.coeffs);
        let adapt_seconds = seconds_since(t2);

        let tip = self.tip_position().unwrap_or(0.0);
        let tip_v = match self.prev_tip {
            Some(prev) if tip > 0.0 => (tip - prev) / self.cfg.timestep,
            _ => 0.0,
        };
        self.prev_tip = if tip > 0.0 { Some(tip) } else { None };

        Ok(StepRecord {
            step: self.step,
            time: self.time,
            components: vec![
                ComponentState {
                    name: "phi".into(),
                    dofs: self.phi.space.n_dofs(),
                    leaves: self.mesh_phi.leaf_count(),
                },
                ComponentState {
                    name: "u".into(),
                    dofs: self.u.space.n_dofs(),
                    leaves: self.mesh_u().leaf_count(),
                },
            ],
            nnz: outcome.nnz,
            solver_iterations: outcome.stats.iterations,
            assemble_seconds,
            solve_seconds,
            adapt_seconds,
            extra: vec![("tip_x".into(), tip), ("tip_velocity".into(), tip_v)],
        })
    }

    /// Rebuild the current system on the union of both meshes and time the
    /// assembly both ways. Returns the single-mesh matrix fill and a
    /// comparison table.
    pub fn single_mesh_comparison(&self) -> Result<(usize, BenchTable)> {
        let t_multi = Instant::now();
        let sys = self.assemble_system()?;
        let (a_multi, _) = sys.finalize();
        let multi_seconds = seconds_since(t_multi);
        let multi_dofs = self.phi.space.n_dofs() + self.u.space.n_dofs();

        let union = union_of(&self.mesh_phi, self.mesh_u())?;
        let space = FESpace::new(&union, self.phi.space.degree())?;
        let snap_phi = TransferSnapshot::capture(&self.phi, &self.mesh_phi)?;
        let snap_u = TransferSnapshot::capture(&self.u, self.mesh_u())?;
        let phi_u = snap_phi.restore(&space, &union)?;
        let u_u = snap_u.restore(&space, &union)?;

        let tau = self.cfg.relax_time;
        let dt = self.cfg.timestep;
        let d = self.cfg.diffusivity;
        let eps = self.cfg.anisotropy;
        let lam = self.coupling;
        let delta = self.cfg.undercooling;

        let t_single = Instant::now();
        let mut sys = BlockSystem::new(vec![Arc::clone(&space), Arc::clone(&space)]);
        sys.add_block(
            0,
            0,
            assemble_matrix(
                &Operator::new()
                    .mass(Coeff::data_map(&phi_u, move |v, g, _| {
                        let a = aniso(g, eps);
                        tau * a * a / dt - (1.0 - 3.0 * v * v)
                    }))
                    .diffusion(Coeff::data_map(&phi_u, move |_, g, _| {
                        let a = aniso(g, eps);
                        a * a
                    })),
                &space,
                &union,
                &space,
                &union,
            )?,
        );
        sys.add_block(
            0,
            1,
            assemble_matrix(
                &Operator::new().mass(Coeff::data_map(&phi_u, move |v, _, _| {
                    lam * (1.0 - v * v).powi(2)
                })),
                &space,
                &union,
                &space,
                &union,
            )?,
        );
        sys.add_block(
            1,
            1,
            assemble_matrix(
                &Operator::new()
                    .mass(Coeff::constant(1.0 / dt))
                    .diffusion(Coeff::constant(d)),
                &space,
                &union,
                &space,
                &union,
            )?,
        );
        sys.add_block(
            1,
            0,
            assemble_matrix(
                &Operator::new().mass(Coeff::constant(-0.5 / dt)),
                &space,
                &union,
                &space,
                &union,
            )?,
        );
        let mut rhs0 = vec![0.0; space.n_dofs()];
        assemble_functional(
            &Functional::new().source(Coeff::data_map(&phi_u, move |v, g, _| {
                let a = aniso(g, eps);
                tau * a * a * v / dt + 2.0 * v.powi(3)
            })),
            &space,
            &union,
            None,
            &mut rhs0,
        )?;
        sys.add_rhs(0, &rhs0);
        let mut rhs1 = vec![0.0; space.n_dofs()];
        assemble_functional(
            &Functional::new().source(Coeff::data_map(&u_u, move |v, _, _| v / dt)),
            &space,
            &union,
            None,
            &mut rhs1,
        )?;
        sys.add_rhs(1, &rhs1);
        sys.set_dirichlet(1, &[2, 3], move |_| -delta);
        let (a_single, _) = sys.finalize();
        let single_seconds = seconds_since(t_single);

        let mut table = BenchTable::default();
        table.push(BenchRow {
            label: "assembly".into(),
            single_seconds,
            multi_seconds,
            single_dofs: 2 * space.n_dofs(),
            multi_dofs,
        });
        let _ = a_multi;
        Ok((a_single.nnz(), table))
    }
}

impl Problem for Dendrite {
    fn name(&self) -> &str {
        "dendrite"
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn step(&mut self) -> Result<StepRecord> {
        self.advance()
    }

    fn write_fields(&self, dir: &Path, step: usize) -> Result<Vec<PathBuf>> {
        let pp = dir.join(format!("dendrite_phi_{step:04}.vtk"));
        write_vtk(&pp, &self.mesh_phi, &[("phi", &self.phi)])?;
        let pu = dir.join(format!("dendrite_u_{step:04}.vtk"));
        write_vtk(&pu, self.mesh_u(), &[("u", &self.u)])?;
        Ok(vec![pp, pu])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anisotropy_has_fourfold_symmetry() {
        let eps = 0.05;
        let g = [0.3, 0.7];
        for rot in [[0.7, -0.3], [-0.3, -0.7], [-0.7, 0.3]] {
            assert!((aniso(g, eps) - aniso(rot, eps)).abs() < 1e-12);
        }
        // extremes along axes and diagonals
        assert!((aniso([1.0, 0.0], eps) - (1.0 + eps)).abs() < 1e-9);
        let diag = aniso([1.0, 1.0], eps);
        assert!((diag - (1.0 - eps)).abs() < 1e-9);
    }

    #[test]
    fn anisotropy_derivative_matches_finite_differences() {
        let eps = 0.05;
        let g = [0.4, -0.9];
        let h = 1e-6;
        for dir in 0..2 {
            let mut gp = g;
            let mut gm = g;
            gp[dir] += h;
            gm[dir] -= h;
            let fd = (aniso(gp, eps) - aniso(gm, eps)) / (2.0 * h);
            assert!(
                (aniso_deriv(g, eps, dir) - fd).abs() < 1e-6,
                "dir {dir}: analytic {} vs fd {}",
                aniso_deriv(g, eps, dir),
                fd
            );
        }
    }

    fn small_config() -> DendriteConfig {
        DendriteConfig {
            extent: 40.0,
            seed_radius: 6.0,
            pre_refine: 3,
            max_level: 9,
            phi_tolerance: 20.0,
            u_tolerance: 80.0,
            timestep: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn seed_grows_and_thermal_mesh_stays_coarser() {
        let mut p = Dendrite::new(small_config()).unwrap();
        let tip0 = p.tip_position().unwrap();
        assert!((tip0 - p.cfg.seed_radius).abs() < 2.0);
        for _ in 0..5 {
            p.advance().unwrap();
        }
        let tip = p.tip_position().unwrap();
        assert!(tip > 0.0, "interface lost");
        assert!(p.u.space.n_dofs() < p.phi.space.n_dofs());
    }

    #[test]
    fn shared_mesh_mode_tracks_the_same_interface() {
        let mut cfg = small_config();
        cfg.single_mesh = true;
        let mut p = Dendrite::new(cfg).unwrap();
        for _ in 0..3 {
            p.advance().unwrap();
        }
        assert_eq!(p.phi.space.n_dofs(), p.u.space.n_dofs());
        assert_eq!(p.mesh_phi().leaf_count(), p.mesh_u().leaf_count());
        assert!(p.tip_position().unwrap() > 0.0);
    }

    #[test]
    fn isotropic_limit_is_unit_factor() {
        for g in [[1.0, 0.0], [0.3, 0.7], [-2.0, 1.5], [1.0, 1.0]] {
            assert!((aniso(g, 0.0) - 1.0).abs() < 1e-12);
            assert!(aniso_deriv(g, 0.0, 0).abs() < 1e-12);
            assert!(aniso_deriv(g, 0.0, 1).abs() < 1e-12);
        }
    }

    #[test]
    fn all_solid_at_temperature_zero_is_stationary() {
        // compatible data throughout: no undercooling, so the far boundary
        // pins u at zero as well
        let mut cfg = small_config();
        cfg.timestep = 0.5;
        cfg.undercooling = 0.0;
        let mut p = Dendrite::new(cfg).unwrap();
        p.phi = FeFunction::from_fn(Arc::clone(&p.phi.space), |_| 1.0);
        p.u = FeFunction::from_fn(Arc::clone(&p.u.space), |_| 0.0);
        p.advance().unwrap();
        for &c in &p.phi.coeffs {
            assert!((c - 1.0).abs() < 1e-9, "phi moved to {c}");
        }
        for &c in &p.u.coeffs {
            assert!(c.abs() < 1e-9, "u moved to {c}");
        }
    }

    #[test]
    fn union_assembly_has_more_fill_than_split_meshes() {
        // strong scale separation: sharply resolved interface, coarse
        // thermal mesh
        let cfg = DendriteConfig {
            extent: 40.0,
            seed_radius: 6.0,
            pre_refine: 3,
            max_level: 11,
            phi_tolerance: 4.0,
            u_tolerance: 60.0,
            timestep: 0.2,
            ..Default::default()
        };
        let mut p = Dendrite::new(cfg).unwrap();
        for _ in 0..2 {
            p.advance().unwrap();
        }
        let (single_nnz, table) = p.single_mesh_comparison().unwrap();
        assert!(
            p.last_nnz < single_nnz,
            "multi {} vs single {}",
            p.last_nnz,
            single_nnz
        );
        let text = table.render();
        assert!(text.contains("assembly"));
    }
}
