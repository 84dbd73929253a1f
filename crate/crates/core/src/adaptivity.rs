//! Predictor-corrector growth of the local domain.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::assembly::{gather, shape};
use crate::coupling;
use crate::error::{Error, Result};
use crate::gl::{gl_load_step, GLConfig, GLIterLog, GLProblem, GLState};
use crate::material::HistoryField;
use crate::mesh::LocalMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restart {
    /// re-solve from the last committed state
    #[default]
    Verbatim,
    /// re-solve from the rejected iterate, history still from the last committed state
    Warm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub tol_d: f64,
    pub max_corrector: usize,
    /// extra layers of edge neighbors around promoted elements
    pub halo: usize,
    pub restart: Restart,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            tol_d: 0.85,
            max_corrector: 50,
            halo: 0,
            restart: Restart::Verbatim,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_d > 0.0 && self.tol_d < 1.0) {
            return Err(Error::Config(format!("tol_d must lie in (0, 1), got {}", self.tol_d)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptEvent {
    pub step: usize,
    pub cycle: usize,
    pub promoted: Vec<usize>,
    pub local_dofs: usize,
}

/// Global elements outside the fictitious region sharing an interface edge with a
/// local interface node where `d_l < tol_d`.
pub fn predict(p: &GLProblem, d_l: &[f64], cfg: &AdaptConfig) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for (i, le) in p.trace_l.edges.iter().enumerate() {
        if !le.nodes.iter().any(|&n| d_l[n] < cfg.tol_d) {
            continue;
        }
        let ge = p.trace_g.edges[p.l_edge_parent[i]];
        if let Some(ei) = p.global.edge_index(ge.nodes[0], ge.nodes[1]) {
            for &(e, _) in &p.global.edges[ei].elements {
                if !p.fictitious[e] {
                    out.insert(e);
                }
            }
        }
    }
    for _ in 0..cfg.halo {
        let ring: Vec<usize> = out.iter().flat_map(|&e| p.global.edge_neighbors(e)).collect();
        out.extend(ring.into_iter().filter(|&e| !p.fictitious[e]));
    }
    out.into_iter().collect()
}

/// New problem with the promoted elements added to the fictitious and local regions.
pub fn grow_local_domain(p: &GLProblem, promoted: &[usize]) -> Result<GLProblem> {
    if promoted.is_empty() {
        return Err(Error::Mesh("nothing to promote".into()));
    }
    if let Some(&e) = promoted.iter().find(|&&e| p.fictitious[e]) {
        return Err(Error::Mesh(format!("element {e} is already fictitious")));
    }
    let mut region: Vec<usize> = p.local.region.clone();
    region.extend_from_slice(promoted);
    GLProblem::new(
        p.global.clone(),
        p.params,
        p.bcs.clone(),
        &region,
        p.local.factor,
        p.heterogeneity.clone(),
        p.mode,
        p.generation + 1,
    )
}

/// Global displacement interpolated at each local node.
pub fn interpolate_global(p_global: &crate::mesh::QuadMesh, u_g: &[f64], local: &LocalMesh) -> Vec<f64> {
    let mut out = vec![0.0; 2 * local.mesh.n_nodes()];
    for (i, &(e, [xi, eta])) in local.node_param.iter().enumerate() {
        let n = shape(xi, eta);
        let c = p_global.elements[e];
        for a in 0..4 {
            out[2 * i] += n[a] * u_g[2 * c[a]];
            out[2 * i + 1] += n[a] * u_g[2 * c[a] + 1];
        }
    }
    out
}

fn element_keys(l: &LocalMesh) -> Vec<(usize, usize)> {
    let per = l.factor * l.factor;
    (0..l.mesh.n_elements()).map(|e| (l.parent[e], e % per)).collect()
}

/// Maps a state of `old` onto `new`: existing local fields are kept, the new region
/// gets `u = π u_G`, `d = 1`, `H = 0`; multipliers restart from zero.
pub fn transfer_solution(old: &GLProblem, s: &GLState, new: &GLProblem) -> GLState {
    let nl = new.local.mesh.n_nodes();
    let pi = interpolate_global(&new.global, &s.u_g, &new.local);
    let mut u_l = vec![0.0; 2 * nl];
    let mut d_l = vec![1.0; nl];
    for (i, key) in new.local.keys.iter().enumerate() {
        match old.local.node_of(key) {
            Some(j) => {
                u_l[2 * i] = s.u_l[2 * j];
                u_l[2 * i + 1] = s.u_l[2 * j + 1];
                d_l[i] = s.d_l[j];
            }
            None => {
                u_l[2 * i] = pi[2 * i];
                u_l[2 * i + 1] = pi[2 * i + 1];
            }
        }
    }
    let old_idx: HashMap<(usize, usize), usize> = element_keys(&old.local).into_iter().enumerate().map(|(e, k)| (k, e)).collect();
    let mut h_l = HistoryField::zeros(new.local.mesh.n_elements());
    for (e, k) in element_keys(&new.local).into_iter().enumerate() {
        if let Some(&o) = old_idx.get(&k) {
            h_l.values[e] = s.h_l.values[o];
        }
    }
    let u_gamma = gather(&s.u_g, &new.im.g_nodes);
    let lambda_c = vec![0.0; new.m_g()];
    let cap = coupling::lambda_rhs_l(&new.robin.k_ia_l, &u_gamma, &new.lg, &lambda_c);
    GLState {
        step: s.step,
        ubar: s.ubar,
        u_g: s.u_g.clone(),
        u_l,
        d_l,
        h_l,
        u_gamma,
        lambda_c,
        lambda_l: vec![0.0; new.m_l()],
        cap_lambda_l: cap,
        iterations: 0,
        converged: s.converged,
    }
}

#[derive(Clone, Debug)]
pub struct CorrectorOutcome {
    pub state: GLState,
    pub events: Vec<AdaptEvent>,
    /// GL solves performed for this load step
    pub solves: usize,
}

/// Solves one load step, growing the local domain until no local interface node
/// falls below `tol_d`. `problem` is replaced by the grown problem.
pub fn predictor_corrector_step(
    problem: &mut GLProblem,
    prev: &GLState,
    ubar: f64,
    gl_cfg: &GLConfig,
    cfg: &AdaptConfig,
    log: &mut Vec<GLIterLog>,
) -> Result<CorrectorOutcome> {
    let mut base = prev.clone();
    let mut events = Vec::new();
    for cycle in 0..=cfg.max_corrector {
        let s = gl_load_step(problem, &base, ubar, gl_cfg, log)?;
        let promoted = predict(problem, &s.d_l, cfg);
        if promoted.is_empty() {
            return Ok(CorrectorOutcome {
                state: s,
                events,
                solves: cycle + 1,
            });
        }
        if cycle == cfg.max_corrector {
            break;
        }
        let grown = grow_local_domain(problem, &promoted)?;
        let next = match cfg.restart {
            Restart::Verbatim => transfer_solution(problem, &base, &grown),
            Restart::Warm => {
                let mut warm = transfer_solution(problem, &s, &grown);
                let committed = transfer_solution(problem, &base, &grown);
                warm.step = committed.step;
                warm.ubar = committed.ubar;
                warm.h_l = committed.h_l;
                warm.d_l = committed.d_l;
                warm
            }
        };
        events.push(AdaptEvent {
            step: prev.step + 1,
            cycle: cycle + 1,
            promoted,
            local_dofs: 3 * grown.local.mesh.n_nodes(),
        });
        *problem = grown;
        base = next;
    }
    Err(Error::Corrector(cfg.max_corrector))
}
