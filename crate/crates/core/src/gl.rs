//! Global-Local iteration: a linear global model with a condensed fictitious
//! patch, coupled to a refined nonlinear local model through Robin conditions.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{self, gather, BoundaryConditions, Geometry, InterfaceMatrices, PhaseInput};
use crate::coupling::{self, RobinMode, RobinParams, SchurSource};
use crate::error::{Error, Result};
use crate::linalg::{diff_norm, kron_i2, mat_t_vec, mat_vec, norm, EliminatedSystem, SparseSystem, Triplets};
use crate::material::{HistoryField, MaterialParams};
use crate::mesh::{self, InterfaceTrace, LocalMesh, QuadMesh, TraceSide};
use crate::single_scale::{rel_change, solve_phase_field, StaggeredConfig};

pub type Heterogeneity = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GLConfig {
    pub tol_gl: f64,
    pub max_iterations: usize,
    pub robin_mode: RobinMode,
    pub stagger: StaggeredConfig,
}

impl Default for GLConfig {
    fn default() -> Self {
        GLConfig {
            tol_gl: 1e-6,
            max_iterations: 100,
            robin_mode: RobinMode::RobinIdentity,
            stagger: StaggeredConfig::default(),
        }
    }
}

/// Everything that depends only on the meshes and the local region.
pub struct GLProblem {
    pub global: QuadMesh,
    pub ggeom: Geometry,
    pub params: MaterialParams,
    pub bcs: BoundaryConditions,
    pub heterogeneity: Option<Heterogeneity>,
    pub mode: RobinMode,
    pub fictitious: Vec<bool>,
    pub local: LocalMesh,
    pub lgeom: Geometry,
    pub trace_g: InterfaceTrace,
    pub trace_l: InterfaceTrace,
    pub im: InterfaceMatrices,
    /// vector forms of the interface matrices
    pub lg: Mat<f64>,
    pub ll: Mat<f64>,
    pub tl: Mat<f64>,
    pub g_dofs: Vec<usize>,
    pub l_dofs: Vec<usize>,
    pub g_fixed: Vec<bool>,
    pub l_fixed: Vec<bool>,
    pub s_c: Mat<f64>,
    pub s_f: Mat<f64>,
    pub a_g: Triplets,
    pub robin: RobinParams,
    pub generation: u64,
    /// global trace edge containing each local trace edge
    pub l_edge_parent: Vec<usize>,
    pub interface_length: f64,
    global_solver: EliminatedSystem,
    /// multiplier scaling of the global saddle, balancing mortar rows against stiffness rows
    mult_scale: f64,
}

/// Row scale for mortar constraints so they are commensurate with stiffness rows.
fn multiplier_scale(params: &MaterialParams, m: &Mat<f64>) -> f64 {
    let mut big: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            big = big.max(m[(i, j)].abs());
        }
    }
    if big > 0.0 {
        (params.lambda + 2.0 * params.mu) / big
    } else {
        1.0
    }
}

fn node_dofs(nodes: &[usize]) -> Vec<usize> {
    nodes.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect()
}

fn fixed_set(bcs: &BoundaryConditions, mesh: &QuadMesh) -> HashSet<usize> {
    bcs.constraints(mesh, 1.0).into_iter().map(|(i, _)| i).collect()
}

/// Free dofs of nodes touched by the masked elements, minus `exclude`.
fn region_dofs(mesh: &QuadMesh, mask: &[bool], exclude: &HashSet<usize>, fixed: &HashSet<usize>) -> Vec<usize> {
    let mut nodes = std::collections::BTreeSet::new();
    for (e, c) in mesh.elements.iter().enumerate() {
        if mask[e] {
            nodes.extend(c.iter().copied());
        }
    }
    nodes
        .into_iter()
        .flat_map(|n| [2 * n, 2 * n + 1])
        .filter(|d| !exclude.contains(d) && !fixed.contains(d))
        .collect()
}

fn parent_edges(trace_l: &InterfaceTrace, lmesh: &QuadMesh, trace_g: &InterfaceTrace, gmesh: &QuadMesh) -> Result<Vec<usize>> {
    let tol = 1e-9 * gmesh.diameter();
    trace_l
        .edges
        .iter()
        .enumerate()
        .map(|(i, le)| {
            let p = lmesh.nodes[le.nodes[0]];
            let q = lmesh.nodes[le.nodes[1]];
            let m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            trace_g
                .edges
                .iter()
                .position(|ge| {
                    let a = gmesh.nodes[ge.nodes[0]];
                    let b = gmesh.nodes[ge.nodes[1]];
                    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                    let d = [m[0] - a[0], m[1] - a[1]];
                    let s = (d[0] * (b[0] - a[0]) + d[1] * (b[1] - a[1])) / len;
                    let off = (d[0] * (b[1] - a[1]) - d[1] * (b[0] - a[0])).abs() / len;
                    off <= tol && s > -tol && s < len + tol
                })
                .ok_or_else(|| Error::Projection {
                    segment: i,
                    reason: "local interface segment has no global parent".into(),
                })
        })
        .collect()
}

impl GLProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        global: QuadMesh,
        params: MaterialParams,
        bcs: BoundaryConditions,
        region: &[usize],
        factor: usize,
        heterogeneity: Option<Heterogeneity>,
        mode: RobinMode,
        generation: u64,
    ) -> Result<Self> {
        let ggeom = Geometry::new(&global)?;
        let ne = global.n_elements();
        let mut fictitious = vec![false; ne];
        for &e in region {
            if e >= ne {
                return Err(Error::Mesh(format!("element {e} outside the global mesh")));
            }
            fictitious[e] = true;
        }
        if fictitious.iter().all(|&f| f) {
            return Err(Error::Mesh("local region covers the whole global mesh".into()));
        }
        let het = heterogeneity.as_ref().map(|h| h.as_ref() as &dyn Fn([f64; 2]) -> f64);
        let local = mesh::refine_region_to_local(&global, region, factor, het)?;
        let lgeom = Geometry::new(&local.mesh)?;
        let trace_g = mesh::extract_interface_mask(&global, &fictitious, TraceSide::Global).excluding_boundary(&global);
        if trace_g.is_empty() {
            return Err(Error::Mesh("local region has no interface with the global domain".into()));
        }
        let trace_l = mesh::project_interface(&trace_g, &global, &local.mesh, TraceSide::Local, None)?;
        let im = assembly::interface_mass_matrices(&global, &trace_g, &local.mesh, &trace_l)?;
        let (lg, ll, tl) = (kron_i2(&im.lg), kron_i2(&im.ll), kron_i2(&im.tl));
        let g_dofs = node_dofs(&im.g_nodes);
        let l_dofs = node_dofs(&im.l_nodes);
        let gfix = fixed_set(&bcs, &global);
        let lfix = fixed_set(&bcs, &local.mesh);
        let g_fixed: Vec<bool> = g_dofs.iter().map(|d| gfix.contains(d)).collect();
        let l_fixed: Vec<bool> = l_dofs.iter().map(|d| lfix.contains(d)).collect();
        let free_pos: Vec<usize> = (0..g_dofs.len()).filter(|&p| !g_fixed[p]).collect();
        let iface: Vec<usize> = free_pos.iter().map(|&p| g_dofs[p]).collect();
        let iface_all: HashSet<usize> = g_dofs.iter().copied().collect();

        let zero = vec![0.0; 2 * global.n_nodes()];
        let complement: Vec<bool> = fictitious.iter().map(|f| !f).collect();
        let n = 2 * global.n_nodes();
        let k_c = assembly::assemble_displacement(&global, &ggeom, &params, None, &zero, Some(&complement), true).triplets;
        let k_f = assembly::assemble_displacement(&global, &ggeom, &params, None, &zero, Some(&fictitious), true).triplets;
        let int_c = region_dofs(&global, &complement, &iface_all, &gfix);
        let int_f = region_dofs(&global, &fictitious, &iface_all, &gfix);
        let s_c_op = coupling::schur_complement(n, &k_c, &iface, &int_c, SchurSource::Complementary, generation)?;
        let s_f_op = coupling::schur_complement(n, &k_f, &iface, &int_f, SchurSource::Fictitious, generation)?;
        let s_c = s_c_op.expand(&free_pos, g_dofs.len());
        let s_f = s_f_op.expand(&free_pos, g_dofs.len());
        // prescribed dofs of the fictitious region are condensed with the interface,
        // otherwise the fictitious block carries the boundary load into the interface
        let f_prescribed: Vec<usize> = region_dofs(&global, &fictitious, &HashSet::new(), &HashSet::new())
            .into_iter()
            .filter(|d| gfix.contains(d))
            .collect();
        let mut a_g = k_c;
        if f_prescribed.is_empty() {
            a_g.extend(k_f);
            coupling::fictitious_condensation(&mut a_g, &s_f_op, &iface);
        } else {
            let mut boundary = iface.clone();
            boundary.extend_from_slice(&f_prescribed);
            let cond = coupling::schur_complement(n, &k_f, &boundary, &int_f, SchurSource::Fictitious, generation)?;
            a_g.extend(k_f);
            coupling::fictitious_condensation(&mut a_g, &cond, &boundary);
        }

        let l_edge_parent = parent_edges(&trace_l, &local.mesh, &trace_g, &global)?;
        let interface_length = trace_g.total_length(&global);

        let mut gfix_sorted: Vec<usize> = gfix.iter().copied().collect();
        gfix_sorted.sort_unstable();
        let mult_scale = multiplier_scale(&params, &lg);
        let global_solver = if mode == RobinMode::DirichletNeumann {
            EliminatedSystem::new(n, &a_g, &gfix_sorted, true)?
        } else {
            let mut t = a_g.clone();
            for p in 0..g_dofs.len() {
                for q in 0..g_dofs.len() {
                    let v = mult_scale * lg[(p, q)];
                    if v != 0.0 {
                        t.push((g_dofs[q], n + p, -v));
                        t.push((n + p, g_dofs[q], -v));
                    }
                }
            }
            let mut fixed = gfix_sorted.clone();
            fixed.extend((0..g_dofs.len()).filter(|&p| g_fixed[p]).map(|p| n + p));
            EliminatedSystem::new(n + g_dofs.len(), &t, &fixed, false)?
        };

        let mut problem = GLProblem {
            global,
            ggeom,
            params,
            bcs,
            heterogeneity,
            mode,
            fictitious,
            local,
            lgeom,
            trace_g,
            trace_l,
            im,
            lg,
            ll,
            tl,
            g_dofs,
            l_dofs,
            g_fixed,
            l_fixed,
            s_c,
            s_f,
            a_g,
            robin: RobinParams {
                mode,
                k_ia_l: Mat::zeros(0, 0),
                k_ia_g: Mat::zeros(0, 0),
                r_g: Mat::zeros(0, 0),
            },
            generation,
            l_edge_parent,
            interface_length,
            global_solver,
            mult_scale,
        };
        let n_l = problem.local.mesh.n_nodes();
        problem.robin = problem.robin_params(&vec![0.0; 2 * n_l], &vec![1.0; n_l])?;
        Ok(problem)
    }

    pub fn region(&self) -> &[usize] {
        &self.local.region
    }

    pub fn m_g(&self) -> usize {
        self.g_dofs.len()
    }

    pub fn m_l(&self) -> usize {
        self.l_dofs.len()
    }

    /// Unknowns of one GL step: global displacements plus local displacement and phase-field.
    pub fn dofs(&self) -> usize {
        2 * self.global.n_nodes() + 3 * self.local.mesh.n_nodes()
    }

    /// Local Schur complement of the degraded tangent at `(u_l, d_l)`, regularized.
    pub fn local_schur(&self, u_l: &[f64], d_l: &[f64]) -> Result<Mat<f64>> {
        let lm = &self.local.mesh;
        let pf = PhaseInput { d: d_l, active: None };
        let k = assembly::assemble_displacement(lm, &self.lgeom, &self.params, Some(pf), u_l, None, true).triplets;
        let lfix = fixed_set(&self.bcs, lm);
        let pos: Vec<usize> = (0..self.m_l()).filter(|&p| !self.l_fixed[p]).collect();
        let iface: Vec<usize> = pos.iter().map(|&p| self.l_dofs[p]).collect();
        let all: HashSet<usize> = self.l_dofs.iter().copied().collect();
        let interior = region_dofs(lm, &vec![true; lm.n_elements()], &all, &lfix);
        let mut s = coupling::schur_complement(2 * lm.n_nodes(), &k, &iface, &interior, SchurSource::Local, self.generation)?;
        if s.regularize()? {
            debug!("local Schur complement regularized by {:e}", s.shift);
        }
        let mut full = s.expand(&pos, self.m_l());
        for p in 0..self.m_l() {
            if self.l_fixed[p] {
                full[(p, p)] = 1.0;
            }
        }
        Ok(full)
    }

    pub fn robin_params(&self, u_l: &[f64], d_l: &[f64]) -> Result<RobinParams> {
        let s_l = if self.mode == RobinMode::Robin {
            Some(self.local_schur(u_l, d_l)?)
        } else {
            None
        };
        coupling::build_robin_params(&self.s_c, s_l.as_ref(), &self.ll, &self.tl, self.mode)
    }

    pub fn global_constraints(&self, ubar: f64) -> Vec<(usize, f64)> {
        self.bcs.constraints(&self.global, ubar)
    }

    pub fn local_constraints(&self, ubar: f64) -> Vec<(usize, f64)> {
        self.bcs.constraints(&self.local.mesh, ubar)
    }

    /// Prescribed interface values (positions in the 2m_G carrier).
    pub fn interface_constraints(&self, ubar: f64) -> Vec<(usize, f64)> {
        let values: BTreeMap<usize, f64> = self.global_constraints(ubar).into_iter().collect();
        (0..self.m_g()).filter(|&p| self.g_fixed[p]).map(|p| (p, values[&self.g_dofs[p]])).collect()
    }

    fn floors(&self) -> (f64, f64) {
        let smax = (0..self.m_g()).map(|i| self.s_c[(i, i)].abs()).fold(0.0, f64::max);
        (1e-14 * self.interface_length, 1e-14 * smax.max(1.0) * self.interface_length)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GLState {
    pub step: usize,
    pub ubar: f64,
    pub u_g: Vec<f64>,
    pub u_l: Vec<f64>,
    pub d_l: Vec<f64>,
    pub h_l: HistoryField,
    pub u_gamma: Vec<f64>,
    pub lambda_c: Vec<f64>,
    pub lambda_l: Vec<f64>,
    /// Robin data Λ_L of the last global solve
    pub cap_lambda_l: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GLState {
    pub fn initial(p: &GLProblem) -> Self {
        let nl = p.local.mesh.n_nodes();
        GLState {
            step: 0,
            ubar: 0.0,
            u_g: vec![0.0; 2 * p.global.n_nodes()],
            u_l: vec![0.0; 2 * nl],
            d_l: vec![1.0; nl],
            h_l: HistoryField::zeros(p.local.mesh.n_elements()),
            u_gamma: vec![0.0; p.m_g()],
            lambda_c: vec![0.0; p.m_g()],
            lambda_l: vec![0.0; p.m_l()],
            cap_lambda_l: vec![0.0; p.m_g()],
            iterations: 0,
            converged: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalSolution {
    pub u_l: Vec<f64>,
    pub d_l: Vec<f64>,
    pub h_l: HistoryField,
    pub u_gamma_half: Vec<f64>,
    pub lambda_l: Vec<f64>,
    pub staggers: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct GlobalSolution {
    pub u_g: Vec<f64>,
    pub lambda_c: Vec<f64>,
    pub u_gamma: Vec<f64>,
}

/// Newton on the local saddle system for fixed d. `x = [u_L | λ_L | u_Γ]`.
fn newton_local(
    p: &GLProblem,
    robin: &RobinParams,
    d: &[f64],
    x: &mut [f64],
    fixed: &[(usize, f64)],
    cap_lambda: &[f64],
    cfg: &StaggeredConfig,
) -> Result<usize> {
    let lm = &p.local.mesh;
    let nu = 2 * lm.n_nodes();
    let (ml, mg) = (p.m_l(), p.m_g());
    let (olam, ogam) = (nu, nu + ml);
    let n = nu + ml + mg;
    let mut is_fixed = vec![false; n];
    for &(i, v) in fixed {
        x[i] = v;
        is_fixed[i] = true;
    }
    let zero: Vec<(usize, f64)> = fixed.iter().map(|&(i, _)| (i, 0.0)).collect();
    // multipliers are carried as λ/sc and constraint rows multiplied by sc
    let sc = multiplier_scale(&p.params, &p.tl);
    for v in &mut x[olam..ogam] {
        *v /= sc;
    }

    let mut coupling_t: Triplets = Vec::new();
    for a in 0..ml {
        for b in 0..ml {
            let v = sc * p.tl[(a, b)];
            if v != 0.0 {
                coupling_t.push((p.l_dofs[a], olam + b, -v));
                coupling_t.push((olam + a, p.l_dofs[b], -v));
            }
        }
        for j in 0..mg {
            let v = sc * p.ll[(a, j)];
            if v != 0.0 {
                coupling_t.push((olam + a, ogam + j, v));
                coupling_t.push((ogam + j, olam + a, v));
            }
        }
    }
    for i in 0..mg {
        for j in 0..mg {
            let v = robin.k_ia_l[(i, j)];
            if v != 0.0 {
                coupling_t.push((ogam + i, ogam + j, v));
            }
        }
    }

    let mut r0 = None;
    for it in 0..=cfg.max_newton {
        let (u, rest) = x.split_at(nu);
        let (lam_s, gam) = rest.split_at(ml);
        let lam: Vec<f64> = lam_s.iter().map(|v| sc * v).collect();
        let lam = lam.as_slice();
        let sys = assembly::assemble_displacement(lm, &p.lgeom, &p.params, Some(PhaseInput { d, active: None }), u, None, true);
        let kmax = sys.triplets.iter().map(|t| t.2.abs()).fold(0.0, f64::max);
        let scale = norm(&sys.rhs) + norm(cap_lambda) + kmax * norm(u);
        let mut r = vec![0.0; n];
        r[..nu].copy_from_slice(&sys.rhs);
        let t_lam = mat_vec(&p.tl, lam);
        for a in 0..ml {
            r[p.l_dofs[a]] -= t_lam[a];
        }
        let tu = mat_vec(&p.tl, &gather(u, &p.im.l_nodes));
        let lu = mat_vec(&p.ll, gam);
        for a in 0..ml {
            r[olam + a] = sc * (lu[a] - tu[a]);
        }
        let llam = mat_t_vec(&p.ll, lam);
        let ku = mat_vec(&robin.k_ia_l, gam);
        for j in 0..mg {
            r[ogam + j] = llam[j] + ku[j] - cap_lambda[j];
        }
        let res: f64 = r.iter().zip(&is_fixed).filter(|(_, f)| !**f).map(|(v, _)| v * v).sum::<f64>().sqrt();
        let first = *r0.get_or_insert(res);
        if res == 0.0 || res <= cfg.newton_tol * first || res <= 1e-13 * scale {
            for v in &mut x[olam..ogam] {
                *v *= sc;
            }
            return Ok(it);
        }
        if it == cfg.max_newton {
            return Err(Error::Newton {
                iterations: it,
                residual: res,
            });
        }
        let mut jac = SparseSystem::new(n);
        jac.triplets = sys.triplets;
        jac.triplets.extend_from_slice(&coupling_t);
        jac.rhs = r.iter().map(|v| -v).collect();
        jac.apply_dirichlet(&zero);
        let dx = jac.solve()?;
        for (a, b) in x.iter_mut().zip(&dx) {
            *a += b;
        }
    }
    unreachable!()
}

/// Staggered local solve with Robin data `cap_lambda`, or with Dirichlet data
/// `dn_trace` on Γ in Dirichlet-Neumann mode.
#[allow(clippy::too_many_arguments)]
pub fn local_robin_solve(
    p: &GLProblem,
    robin: &RobinParams,
    h_prev: &HistoryField,
    u_l0: &[f64],
    cap_lambda: &[f64],
    dn_trace: Option<&[f64]>,
    ubar: f64,
    cfg: &StaggeredConfig,
) -> Result<LocalSolution> {
    let lm = &p.local.mesh;
    let nu = 2 * lm.n_nodes();
    let (ml, mg) = (p.m_l(), p.m_g());
    let mut fixed = p.local_constraints(ubar);
    fixed.extend((0..ml).filter(|&a| p.l_fixed[a]).map(|a| (nu + a, 0.0)));
    match dn_trace {
        Some(t) => fixed.extend((0..mg).map(|j| (nu + ml + j, t[j]))),
        None => fixed.extend(p.interface_constraints(ubar).into_iter().map(|(j, v)| (nu + ml + j, v))),
    }
    let mut x = vec![0.0; nu + ml + mg];
    x[..nu].copy_from_slice(u_l0);
    let mut u_prev = u_l0.to_vec();
    let mut d = vec![1.0; lm.n_nodes()];
    let mut h = h_prev.clone();
    let floor = 1e-14 * lm.diameter();
    let mut converged = false;
    let mut sweeps = 0;
    for s in 1..=cfg.max_stagger {
        sweeps = s;
        let d_new = solve_phase_field(lm, &p.lgeom, &p.params, &h, None)?;
        newton_local(p, robin, &d_new, &mut x, &fixed, cap_lambda, cfg)?;
        let du = rel_change(&x[..nu], &u_prev, floor);
        let dd = rel_change(&d_new, &d, 1e-14);
        u_prev.copy_from_slice(&x[..nu]);
        d = d_new;
        // max over sweeps as well, so the committed d never sits below the solve from the committed H
        h = h.max_with(&assembly::driving_field(lm, &p.lgeom, &p.params, &x[..nu]));
        if s > 1 && du <= cfg.stagger_tol && dd <= cfg.stagger_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("local stagger not converged after {sweeps} sweeps");
    }
    Ok(LocalSolution {
        u_l: x[..nu].to_vec(),
        d_l: d,
        h_l: h,
        u_gamma_half: x[nu + ml..].to_vec(),
        lambda_l: x[nu..nu + ml].to_vec(),
        staggers: sweeps,
        converged,
    })
}

pub fn global_robin_solve(
    p: &GLProblem,
    robin: &RobinParams,
    u_gamma_half: &[f64],
    lambda_l: &[f64],
    u_l: &[f64],
    ubar: f64,
) -> Result<GlobalSolution> {
    let n = 2 * p.global.n_nodes();
    let mg = p.m_g();
    let gcons = p.global_constraints(ubar);
    if p.mode == RobinMode::DirichletNeumann {
        let f = mat_t_vec(&p.ll, lambda_l);
        let mut rhs = vec![0.0; n];
        for q in 0..mg {
            rhs[p.g_dofs[q]] -= f[q];
        }
        let u_g = p.global_solver.solve(&rhs, &gcons)?;
        let zero_fixed: Vec<(usize, f64)> = (0..mg).filter(|&q| p.g_fixed[q]).map(|q| (q, 0.0)).collect();
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let lambda_c = coupling::solve_with_fixed(&p.lg, &neg, &zero_fixed)?;
        let u_gamma = gather(&u_g, &p.im.g_nodes);
        return Ok(GlobalSolution { u_g, lambda_c, u_gamma });
    }
    let mut rhs = vec![0.0; n + mg];
    let lu = mat_vec(&p.lg, u_gamma_half);
    for q in 0..mg {
        rhs[n + q] = -p.mult_scale * lu[q];
    }
    let mut values = gcons;
    values.extend((0..mg).filter(|&q| p.g_fixed[q]).map(|q| (n + q, 0.0)));
    let x = p.global_solver.solve(&rhs, &values)?;
    let u_g = x[..n].to_vec();
    let lambda_c: Vec<f64> = x[n..].iter().map(|v| p.mult_scale * v).collect();
    let cap_g = coupling::lambda_rhs_g(&robin.k_ia_g, &gather(u_l, &p.im.l_nodes), &p.ll, lambda_l);
    let lc = mat_vec(&p.lg, &lambda_c);
    let b: Vec<f64> = cap_g.iter().zip(&lc).map(|(a, c)| a - c).collect();
    let u_gamma = coupling::solve_with_fixed(&robin.r_g, &b, &p.interface_constraints(ubar))?;
    Ok(GlobalSolution { u_g, lambda_c, u_gamma })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GLIterLog {
    pub step: usize,
    pub k: usize,
    pub du_gamma: f64,
    pub dlambda: f64,
    pub staggers: usize,
    pub wall_time: f64,
}

/// One load step of the GL scheme, warm-started from `prev`.
pub fn gl_load_step(p: &GLProblem, prev: &GLState, ubar: f64, cfg: &GLConfig, log: &mut Vec<GLIterLog>) -> Result<GLState> {
    let start = Instant::now();
    let robin_step;
    let robin = if p.mode == RobinMode::Robin && prev.step > 0 {
        robin_step = p.robin_params(&prev.u_l, &prev.d_l)?;
        &robin_step
    } else {
        &p.robin
    };
    let (fu, fl) = p.floors();
    let mut cap = prev.cap_lambda_l.clone();
    let mut u_l = prev.u_l.clone();
    let mut u_g = prev.u_g.clone();
    let mut trace = String::new();
    for k in 1..=cfg.max_iterations {
        let dn = (p.mode == RobinMode::DirichletNeumann).then(|| {
            let mut t = gather(&u_g, &p.im.g_nodes);
            for (q, v) in p.interface_constraints(ubar) {
                t[q] = v;
            }
            t
        });
        let loc = local_robin_solve(p, robin, &prev.h_l, &u_l, &cap, dn.as_deref(), ubar, &cfg.stagger)?;
        let u_half = dn.clone().unwrap_or_else(|| loc.u_gamma_half.clone());
        let glob = global_robin_solve(p, robin, &u_half, &loc.lambda_l, &loc.u_l, ubar)?;
        let new_cap = match p.mode {
            RobinMode::DirichletNeumann => mat_t_vec(&p.ll, &loc.lambda_l),
            _ => coupling::lambda_rhs_l(&robin.k_ia_l, &gather(&glob.u_g, &p.im.g_nodes), &p.lg, &glob.lambda_c),
        };
        let du = diff_norm(&u_half, &glob.u_gamma) / norm(&glob.u_gamma).max(fu);
        let dl = diff_norm(&new_cap, &cap) / norm(&new_cap).max(fl);
        log.push(GLIterLog {
            step: prev.step + 1,
            k,
            du_gamma: du,
            dlambda: dl,
            staggers: loc.staggers,
            wall_time: start.elapsed().as_secs_f64(),
        });
        trace.push_str(&format!("[k={k} du={du:.3e} dL={dl:.3e}]"));
        debug!("GL step {} k={k}: du={du:.3e} dLambda={dl:.3e} staggers={}", prev.step + 1, loc.staggers);
        cap = new_cap;
        u_l = loc.u_l.clone();
        u_g = glob.u_g.clone();
        if du <= cfg.tol_gl && dl <= cfg.tol_gl {
            return Ok(GLState {
                step: prev.step + 1,
                ubar,
                u_g: glob.u_g,
                u_l: loc.u_l,
                d_l: loc.d_l,
                h_l: loc.h_l,
                u_gamma: glob.u_gamma,
                lambda_c: glob.lambda_c,
                lambda_l: loc.lambda_l,
                cap_lambda_l: cap,
                iterations: k,
                converged: true,
            });
        }
    }
    Err(Error::GlobalLocal {
        iterations: cfg.max_iterations,
        trace,
    })
}

/// `‖L_G λ_C + L_Lᵀ λ_L‖` at the global interface nodes.
pub fn traction_mismatch(p: &GLProblem, s: &GLState) -> f64 {
    let a = mat_vec(&p.lg, &s.lambda_c);
    let b = mat_t_vec(&p.ll, &s.lambda_l);
    (0..p.m_g()).filter(|&q| !p.g_fixed[q]).map(|q| (a[q] + b[q]).powi(2)).sum::<f64>().sqrt()
}

pub fn reaction(p: &GLProblem, s: &GLState) -> f64 {
    let complement: Vec<bool> = p.fictitious.iter().map(|f| !f).collect();
    let fg = assembly::assemble_displacement(&p.global, &p.ggeom, &p.params, None, &s.u_g, Some(&complement), false).rhs;
    let pf = PhaseInput { d: &s.d_l, active: None };
    let fl = assembly::assemble_displacement(&p.local.mesh, &p.lgeom, &p.params, Some(pf), &s.u_l, None, false).rhs;
    let rg: f64 = p.bcs.loaded_dofs(&p.global).iter().map(|&i| fg[i]).sum();
    let rl: f64 = p.bcs.loaded_dofs(&p.local.mesh).iter().map(|&i| fl[i]).sum();
    rg + rl
}

/// Strain energy (complement plus degraded local) and local fracture energy.
pub fn energies(p: &GLProblem, s: &GLState) -> (f64, f64) {
    let complement: Vec<bool> = p.fictitious.iter().map(|f| !f).collect();
    let wc = assembly::strain_energy(&p.global, &p.ggeom, &p.params, None, &s.u_g, Some(&complement));
    let pf = PhaseInput { d: &s.d_l, active: None };
    let wl = assembly::strain_energy(&p.local.mesh, &p.lgeom, &p.params, Some(pf), &s.u_l, None);
    let wf = assembly::fracture_energy(&p.local.mesh, &p.lgeom, &p.params, &s.d_l, None);
    (wc + wl, wf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{DirichletCondition, Selector};
    use crate::mesh::build_structured_mesh;
    use crate::single_scale::{solve_load_step, SingleScaleProblem, SingleScaleState};

    fn bcs() -> BoundaryConditions {
        BoundaryConditions {
            domain: [0.0, 0.0, 1.0, 1.0],
            conditions: vec![
                DirichletCondition { selector: Selector::Bottom, component: 0, factor: 0.0 },
                DirichletCondition { selector: Selector::Bottom, component: 1, factor: 0.0 },
                DirichletCondition { selector: Selector::Top, component: 1, factor: 1.0 },
            ],
            loaded: Some((Selector::Top, 1)),
        }
    }

    fn params() -> MaterialParams {
        MaterialParams {
            lambda: 121.15,
            mu: 80.77,
            chi: 50.0,
            xi: 2.0,
            alpha: 50.0,
            gc: 1e3,
            l: 0.2,
            kappa: 1e-10,
            fiber_angle: 0.5,
        }
    }

    fn center_region(n: usize) -> Vec<usize> {
        let q = n / 4;
        (0..n * n).filter(|e| (q..n - q).contains(&(e % n)) && (q..n - q).contains(&(e / n))).collect()
    }

    #[test]
    fn elastic_patch_reproduces_single_scale() {
        let n = 8;
        reproduces_single_scale(n, &center_region(n));
    }

    #[test]
    fn patch_on_loaded_edge_reproduces_single_scale() {
        let n = 8;
        let top: Vec<usize> = (0..n * n).filter(|e| e / n >= n - 3 && (2..6).contains(&(e % n))).collect();
        reproduces_single_scale(n, &top);
        let corner: Vec<usize> = (0..n * n).filter(|e| e / n >= n - 3 && e % n >= n - 3).collect();
        reproduces_single_scale(n, &corner);
    }

    fn reproduces_single_scale(n: usize, region: &[usize]) {
        let g = build_structured_mesh(1.0, 1.0, n, n, &[]).unwrap();
        let p = GLProblem::new(g.clone(), params(), bcs(), region, 1, None, RobinMode::RobinIdentity, 0).unwrap();
        let cfg = GLConfig { tol_gl: 1e-10, ..Default::default() };
        let mut log = Vec::new();
        let s = gl_load_step(&p, &GLState::initial(&p), 1e-3, &cfg, &mut log).unwrap();

        let mut ss = SingleScaleProblem::new(g, params(), bcs()).unwrap();
        ss.pf_region = Some(p.fictitious.clone());
        let (r, _, _) = solve_load_step(&ss, &SingleScaleState::initial(&ss), 1e-3, &StaggeredConfig::default()).unwrap();
        let scale = norm(&r.u);
        for (i, key) in p.local.keys.iter().enumerate() {
            let mesh::NodeKey::Vertex(gn) = key else { panic!() };
            for c in 0..2 {
                assert!((s.u_l[2 * i + c] - r.u[2 * gn + c]).abs() < 1e-10 * scale);
            }
        }
        for (e, c) in p.global.elements.iter().enumerate() {
            if !p.fictitious[e] {
                for &nn in c {
                    assert!((s.u_g[2 * nn] - r.u[2 * nn]).abs() < 1e-10 * scale);
                }
            }
        }
        let rs = crate::single_scale::reaction(&ss, &r.u, &r.d);
        assert!((reaction(&p, &s) - rs).abs() < 1e-9 * rs.abs());
        assert!(traction_mismatch(&p, &s) < 1e-8 * norm(&s.lambda_c));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = build_structured_mesh(1.0, 1.0, 4, 4, &[]).unwrap();
        let p = GLProblem::new(g, params(), bcs(), &[5, 6, 9, 10], 2, None, RobinMode::RobinIdentity, 0).unwrap();
        let mut log = Vec::new();
        let s = gl_load_step(&p, &GLState::initial(&p), 0.0, &GLConfig::default(), &mut log).unwrap();
        assert!(s.u_g.iter().chain(&s.u_l).all(|v| v.abs() < 1e-300));
        assert!(s.d_l.iter().all(|&d| (d - 1.0).abs() < 1e-12));
    }

    #[test]
    fn invisible_patch_in_global_solve() {
        // global problem with u_Γ from the plain solve returns the plain solve
        let g = build_structured_mesh(1.0, 1.0, 6, 6, &[]).unwrap();
        let p = GLProblem::new(g.clone(), params(), bcs(), &[14, 15, 20, 21], 1, None, RobinMode::RobinIdentity, 0).unwrap();
        let mut ss = SingleScaleProblem::new(g, params(), bcs()).unwrap();
        ss.pf_region = Some(vec![false; 36]);
        let (r, _, _) = solve_load_step(&ss, &SingleScaleState::initial(&ss), 2e-3, &StaggeredConfig::default()).unwrap();
        let trace = gather(&r.u, &p.im.g_nodes);
        let glob = global_robin_solve(&p, &p.robin, &trace, &vec![0.0; p.m_l()], &vec![0.0; 2 * p.local.mesh.n_nodes()], 2e-3).unwrap();
        for (e, c) in p.global.elements.iter().enumerate() {
            for &nn in c {
                for k in 0..2 {
                    assert!((glob.u_g[2 * nn + k] - r.u[2 * nn + k]).abs() < 1e-10 * norm(&r.u), "element {e}");
                }
            }
        }
    }

    #[test]
    fn non_matching_factor_two_converges() {
        let n = 8;
        let g = build_structured_mesh(1.0, 1.0, n, n, &[]).unwrap();
        let p = GLProblem::new(g, params(), bcs(), &center_region(n), 2, None, RobinMode::RobinIdentity, 0).unwrap();
        let mut log = Vec::new();
        let s = gl_load_step(&p, &GLState::initial(&p), 1e-3, &GLConfig::default(), &mut log).unwrap();
        assert!(s.converged && s.iterations <= 5, "{log:?}");
        let mut log2 = Vec::new();
        gl_load_step(&p, &s, 2e-3, &GLConfig::default(), &mut log2).unwrap();
    }
}
