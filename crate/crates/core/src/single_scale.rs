//! Monolithic-domain staggered solver used as the reference for Global-Local runs.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{self, BoundaryConditions, Geometry, PhaseInput};
use crate::error::{Error, Result};
use crate::linalg::{diff_norm, norm, SparseFactor};
use crate::material::{HistoryField, MaterialParams};
use crate::mesh::QuadMesh;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSchedule {
    /// mm per step
    pub increment: f64,
    pub steps: usize,
}

impl LoadSchedule {
    pub fn ubar(&self, step: usize) -> f64 {
        self.increment * step as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaggeredConfig {
    pub newton_tol: f64,
    pub stagger_tol: f64,
    pub max_stagger: usize,
    pub max_newton: usize,
}

impl Default for StaggeredConfig {
    fn default() -> Self {
        StaggeredConfig {
            newton_tol: 1e-10,
            stagger_tol: 1e-6,
            max_stagger: 2000,
            max_newton: 40,
        }
    }
}

/// Relative change with a floor against 0/0.
pub fn rel_change(new: &[f64], old: &[f64], floor: f64) -> f64 {
    diff_norm(new, old) / norm(new).max(floor)
}

/// Newton iterations on the displacement with the phase-field fixed. Returns the
/// iteration count.
pub fn newton_displacement(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    pf: Option<PhaseInput>,
    constraints: &[(usize, f64)],
    u: &mut [f64],
    cfg: &StaggeredConfig,
) -> Result<usize> {
    for &(i, v) in constraints {
        u[i] = v;
    }
    let zero: Vec<(usize, f64)> = constraints.iter().map(|&(i, _)| (i, 0.0)).collect();
    let mut fixed = vec![false; u.len()];
    for &(i, _) in constraints {
        fixed[i] = true;
    }
    let mut r0 = None;
    for it in 0..=cfg.max_newton {
        let mut sys = assembly::assemble_displacement(mesh, geom, params, pf, u, None, true);
        // assembly roundoff grows with the element forces, not with the net residual
        let kmax = sys.triplets.iter().map(|t| t.2.abs()).fold(0.0, f64::max);
        let scale = norm(&sys.rhs) + kmax * norm(u);
        let free_res: f64 = sys
            .rhs
            .iter()
            .enumerate()
            .filter(|(i, _)| !fixed[*i])
            .map(|(_, r)| r * r)
            .sum::<f64>()
            .sqrt();
        let first = *r0.get_or_insert(free_res);
        if free_res == 0.0 || free_res <= cfg.newton_tol * first || free_res <= 1e-13 * scale {
            return Ok(it);
        }
        if it == cfg.max_newton {
            return Err(Error::Newton {
                iterations: it,
                residual: free_res,
            });
        }
        for r in sys.rhs.iter_mut() {
            *r = -*r;
        }
        sys.apply_dirichlet(&zero);
        let du = SparseFactor::spd(sys.n, &sys.triplets)?.solve(&sys.rhs)?;
        for (a, b) in u.iter_mut().zip(&du) {
            *a += b;
        }
    }
    unreachable!()
}

pub fn solve_phase_field(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    h: &HistoryField,
    active: Option<&[bool]>,
) -> Result<Vec<f64>> {
    assembly::assemble_phase_field(mesh, geom, params, h, active).solve_spd()
}

pub struct SingleScaleProblem {
    pub mesh: QuadMesh,
    pub geom: Geometry,
    pub params: MaterialParams,
    pub bcs: BoundaryConditions,
    /// elements carrying the phase-field; `None` means all
    pub pf_region: Option<Vec<bool>>,
}

impl SingleScaleProblem {
    pub fn new(mesh: QuadMesh, params: MaterialParams, bcs: BoundaryConditions) -> Result<Self> {
        let geom = Geometry::new(&mesh)?;
        Ok(SingleScaleProblem {
            mesh,
            geom,
            params,
            bcs,
            pf_region: None,
        })
    }

    pub fn dofs(&self) -> usize {
        3 * self.mesh.n_nodes()
    }

    pub fn phase<'a>(&'a self, d: &'a [f64]) -> Option<PhaseInput<'a>> {
        Some(PhaseInput {
            d,
            active: self.pf_region.as_deref(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleScaleState {
    pub step: usize,
    pub ubar: f64,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub history: HistoryField,
}

impl SingleScaleState {
    pub fn initial(problem: &SingleScaleProblem) -> Self {
        SingleScaleState {
            step: 0,
            ubar: 0.0,
            u: vec![0.0; 2 * problem.mesh.n_nodes()],
            d: vec![1.0; problem.mesh.n_nodes()],
            history: HistoryField::zeros(problem.mesh.n_elements()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub ubar: f64,
    pub reaction: f64,
    pub strain_energy: f64,
    pub fracture_energy: f64,
    pub dofs: usize,
    pub wall_time: f64,
    pub staggers: usize,
    pub converged: bool,
}

pub fn reaction(problem: &SingleScaleProblem, u: &[f64], d: &[f64]) -> f64 {
    let f = assembly::assemble_displacement(&problem.mesh, &problem.geom, &problem.params, problem.phase(d), u, None, false).rhs;
    problem.bcs.loaded_dofs(&problem.mesh).iter().map(|&i| f[i]).sum()
}

pub fn solve_load_step(
    problem: &SingleScaleProblem,
    prev: &SingleScaleState,
    ubar: f64,
    cfg: &StaggeredConfig,
) -> Result<(SingleScaleState, usize, bool)> {
    let mesh = &problem.mesh;
    let constraints = problem.bcs.constraints(mesh, ubar);
    let mut u = prev.u.clone();
    let mut d = prev.d.clone();
    let mut h = prev.history.clone();
    let active = problem.pf_region.as_deref();
    let floor = 1e-14 * mesh.diameter();
    let mut converged = false;
    let mut sweeps = 0;
    for s in 1..=cfg.max_stagger {
        sweeps = s;
        let d_new = solve_phase_field(mesh, &problem.geom, &problem.params, &h, active)?;
        let mut u_new = u.clone();
        newton_displacement(mesh, &problem.geom, &problem.params, problem.phase(&d_new), &constraints, &mut u_new, cfg)?;
        let du = rel_change(&u_new, &u, floor);
        let dd = rel_change(&d_new, &d, 1e-14);
        u = u_new;
        d = d_new;
        // max over sweeps as well, so the committed d never sits below the solve from the committed H
        h = h.max_with(&assembly::driving_field(mesh, &problem.geom, &problem.params, &u));
        debug!("stagger {s}: du={du:.3e} dd={dd:.3e}");
        if s > 1 && du <= cfg.stagger_tol && dd <= cfg.stagger_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("stagger not converged after {sweeps} sweeps at ubar={ubar}");
    }
    Ok((
        SingleScaleState {
            step: prev.step + 1,
            ubar,
            u,
            d,
            history: h,
        },
        sweeps,
        converged,
    ))
}

pub fn report(problem: &SingleScaleProblem, state: &SingleScaleState, wall: f64, staggers: usize, converged: bool) -> StepReport {
    let active = problem.pf_region.as_deref();
    StepReport {
        step: state.step,
        ubar: state.ubar,
        reaction: reaction(problem, &state.u, &state.d),
        strain_energy: assembly::strain_energy(&problem.mesh, &problem.geom, &problem.params, problem.phase(&state.d), &state.u, None),
        fracture_energy: assembly::fracture_energy(&problem.mesh, &problem.geom, &problem.params, &state.d, active),
        dofs: problem.dofs(),
        wall_time: wall,
        staggers,
        converged,
    }
}

/// Runs the schedule; `observe` sees every committed state.
pub fn run_simulation(
    problem: &SingleScaleProblem,
    schedule: &LoadSchedule,
    cfg: &StaggeredConfig,
    mut observe: impl FnMut(&SingleScaleState, &StepReport) -> Result<()>,
) -> Result<Vec<StepReport>> {
    let mut state = SingleScaleState::initial(problem);
    let mut out = Vec::with_capacity(schedule.steps);
    let start = Instant::now();
    for n in 1..=schedule.steps {
        let (next, staggers, ok) = solve_load_step(problem, &state, schedule.ubar(n), cfg)?;
        state = next;
        let rep = report(problem, &state, start.elapsed().as_secs_f64(), staggers, ok);
        observe(&state, &rep)?;
        out.push(rep);
    }
    Ok(out)
}
