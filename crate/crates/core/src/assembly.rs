//! Q1 element machinery, boundary selectors, displacement and phase-field
//! assembly, energies, and the interface trace/mortar matrices.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseSystem;
use crate::material::{self, HistoryField, MaterialParams, Sym2};
use crate::mesh::{InterfaceTrace, QuadMesh};

const G: f64 = 0.577_350_269_189_625_8;

pub const GAUSS_POINTS: [(f64, f64); 4] = [(-G, -G), (G, -G), (G, G), (-G, G)];

pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ]
}

fn shape_derivatives(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ]
}

/// Determinant and inverse of the isoparametric Jacobian.
pub fn jacobian(x: &[[f64; 2]; 4], xi: f64, eta: f64) -> (f64, [[f64; 2]; 2]) {
    let dn = shape_derivatives(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += dn[a][c] * x[a][r];
            }
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    (det, inv)
}

#[derive(Clone, Copy, Debug)]
pub struct QpGeom {
    pub n: [f64; 4],
    /// physical gradients dN/dx, dN/dy
    pub dn: [[f64; 2]; 4],
    /// |J|·weight
    pub w: f64,
}

/// Cached quadrature data for every element.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub qp: Vec<[QpGeom; 4]>,
}

impl Geometry {
    pub fn new(mesh: &QuadMesh) -> Result<Self> {
        let mut qp = Vec::with_capacity(mesh.n_elements());
        for e in 0..mesh.n_elements() {
            let x = mesh.element_coords(e);
            let mut pts = [QpGeom {
                n: [0.0; 4],
                dn: [[0.0; 2]; 4],
                w: 0.0,
            }; 4];
            for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
                let (det, inv) = jacobian(&x, xi, eta);
                if !(det > 0.0) {
                    return Err(Error::Jacobian { element: e, det });
                }
                let dref = shape_derivatives(xi, eta);
                let mut dn = [[0.0; 2]; 4];
                for a in 0..4 {
                    // dN/dx_c = dN/dξ_r · (J⁻¹)_{rc}
                    for c in 0..2 {
                        dn[a][c] = dref[a][0] * inv[0][c] + dref[a][1] * inv[1][c];
                    }
                }
                pts[k] = QpGeom {
                    n: shape(xi, eta),
                    dn,
                    w: det,
                };
            }
            qp.push(pts);
        }
        Ok(Geometry { qp })
    }
}

pub fn strain_at(mesh: &QuadMesh, g: &QpGeom, e: usize, u: &[f64]) -> Sym2 {
    let c = mesh.elements[e];
    let mut s = Sym2::zero();
    for a in 0..4 {
        let ux = u[2 * c[a]];
        let uy = u[2 * c[a] + 1];
        s.xx += g.dn[a][0] * ux;
        s.yy += g.dn[a][1] * uy;
        s.xy += 0.5 * (g.dn[a][1] * ux + g.dn[a][0] * uy);
    }
    s
}

/// Nodal phase-field restricted to an optional set of active elements; other
/// elements see `d ≡ 1`.
#[derive(Clone, Copy)]
pub struct PhaseInput<'a> {
    pub d: &'a [f64],
    pub active: Option<&'a [bool]>,
}

impl PhaseInput<'_> {
    fn at(&self, mesh: &QuadMesh, e: usize, g: &QpGeom) -> f64 {
        if let Some(a) = self.active {
            if !a[e] {
                return 1.0;
            }
        }
        let c = mesh.elements[e];
        (0..4).map(|k| g.n[k] * self.d[c[k]]).sum()
    }
}

fn d_at(pf: Option<PhaseInput>, mesh: &QuadMesh, e: usize, g: &QpGeom) -> f64 {
    pf.map_or(1.0, |p| p.at(mesh, e, g))
}

fn included(mask: Option<&[bool]>, e: usize) -> bool {
    mask.map_or(true, |m| m[e])
}

/// Internal force vector and, if requested, the tangent stiffness.
pub fn assemble_displacement(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    pf: Option<PhaseInput>,
    u: &[f64],
    mask: Option<&[bool]>,
    with_tangent: bool,
) -> SparseSystem {
    let n = 2 * mesh.n_nodes();
    let mut sys = SparseSystem::new(n);
    if with_tangent {
        sys.triplets.reserve(64 * mesh.n_elements());
    }
    for e in 0..mesh.n_elements() {
        if !included(mask, e) {
            continue;
        }
        let p = params.scaled(mesh.stiffness_scale[e]);
        let c = mesh.elements[e];
        let mut ke = [[0.0; 8]; 8];
        let mut fe = [0.0; 8];
        for g in &geom.qp[e] {
            let eps = strain_at(mesh, g, e, u);
            let d = d_at(pf, mesh, e, g).max(0.0);
            let s = material::stress(&eps, d, &p);
            for a in 0..4 {
                let (bx, by) = (g.dn[a][0], g.dn[a][1]);
                fe[2 * a] += g.w * (bx * s.xx + by * s.xy);
                fe[2 * a + 1] += g.w * (by * s.yy + bx * s.xy);
            }
            if with_tangent {
                let cm = material::tangent(&eps, d, &p);
                let mut bmat = [[0.0; 8]; 3];
                for a in 0..4 {
                    let (bx, by) = (g.dn[a][0], g.dn[a][1]);
                    bmat[0][2 * a] = bx;
                    bmat[1][2 * a + 1] = by;
                    bmat[2][2 * a] = by;
                    bmat[2][2 * a + 1] = bx;
                }
                let mut cb = [[0.0; 8]; 3];
                for i in 0..3 {
                    for j in 0..8 {
                        cb[i][j] = (0..3).map(|k| cm[i][k] * bmat[k][j]).sum();
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        ke[i][j] += g.w * (0..3).map(|k| bmat[k][i] * cb[k][j]).sum::<f64>();
                    }
                }
            }
        }
        for a in 0..4 {
            for ca in 0..2 {
                let i = 2 * a + ca;
                let gi = 2 * c[a] + ca;
                sys.rhs[gi] += fe[i];
                if with_tangent {
                    for b in 0..4 {
                        for cb in 0..2 {
                            sys.add(gi, 2 * c[b] + cb, ke[i][2 * b + cb]);
                        }
                    }
                }
            }
        }
    }
    sys
}

fn diffusion(params: &MaterialParams) -> [[f64; 2]; 2] {
    let m = params.structural();
    let l2 = params.l * params.l;
    [
        [l2 * (1.0 + params.alpha * m.xx), l2 * params.alpha * m.xy],
        [l2 * params.alpha * m.xy, l2 * (1.0 + params.alpha * m.yy)],
    ]
}

/// Linear phase-field system `A d = b` for frozen history; nodes outside the
/// active elements are pinned to 1.
pub fn assemble_phase_field(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    h: &HistoryField,
    mask: Option<&[bool]>,
) -> SparseSystem {
    let n = mesh.n_nodes();
    let mut sys = SparseSystem::new(n);
    let dm = diffusion(params);
    let mut touched = vec![false; n];
    for e in 0..mesh.n_elements() {
        if !included(mask, e) {
            continue;
        }
        let c = mesh.elements[e];
        let mut ae = [[0.0; 4]; 4];
        let mut be = [0.0; 4];
        for (q, g) in geom.qp[e].iter().enumerate() {
            let react = 2.0 * (1.0 - params.kappa) * h.values[e][q] + 1.0;
            for a in 0..4 {
                be[a] += g.w * g.n[a];
                // row-sum lumped reaction keeps the matrix monotone in H
                ae[a][a] += g.w * react * g.n[a];
                let ga = g.dn[a];
                let dga = [dm[0][0] * ga[0] + dm[0][1] * ga[1], dm[1][0] * ga[0] + dm[1][1] * ga[1]];
                for b in 0..4 {
                    let gb = g.dn[b];
                    ae[a][b] += g.w * (dga[0] * gb[0] + dga[1] * gb[1]);
                }
            }
        }
        for a in 0..4 {
            touched[c[a]] = true;
            sys.rhs[c[a]] += be[a];
            for b in 0..4 {
                sys.add(c[a], c[b], ae[a][b]);
            }
        }
    }
    let pinned: Vec<(usize, f64)> = (0..n).filter(|&i| !touched[i]).map(|i| (i, 1.0)).collect();
    if !pinned.is_empty() {
        sys.apply_dirichlet(&pinned);
    }
    sys
}

/// Nonlinear residual of the phase-field equation using `d₊`, with the same
/// lumped reaction as [`assemble_phase_field`].
pub fn phase_field_residual(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    h: &HistoryField,
    d: &[f64],
    mask: Option<&[bool]>,
) -> Vec<f64> {
    let mut r = vec![0.0; mesh.n_nodes()];
    let dm = diffusion(params);
    for e in 0..mesh.n_elements() {
        if !included(mask, e) {
            continue;
        }
        let c = mesh.elements[e];
        for (q, g) in geom.qp[e].iter().enumerate() {
            let mut grad = [0.0; 2];
            for k in 0..4 {
                grad[0] += g.dn[k][0] * d[c[k]];
                grad[1] += g.dn[k][1] * d[c[k]];
            }
            let flux = [dm[0][0] * grad[0] + dm[0][1] * grad[1], dm[1][0] * grad[0] + dm[1][1] * grad[1]];
            for a in 0..4 {
                let da = d[c[a]];
                let src = 2.0 * (1.0 - params.kappa) * da.max(0.0) * h.values[e][q] + (da - 1.0);
                r[c[a]] += g.w * (src * g.n[a] + flux[0] * g.dn[a][0] + flux[1] * g.dn[a][1]);
            }
        }
    }
    r
}

/// Crack driving state at every quadrature point.
pub fn driving_field(mesh: &QuadMesh, geom: &Geometry, params: &MaterialParams, u: &[f64]) -> HistoryField {
    let values = (0..mesh.n_elements())
        .map(|e| {
            let p = params.scaled(mesh.stiffness_scale[e]);
            let mut r = [0.0; 4];
            for (q, g) in geom.qp[e].iter().enumerate() {
                r[q] = material::crack_driving_state(&strain_at(mesh, g, e, u), &p);
            }
            r
        })
        .collect();
    HistoryField { values }
}

pub fn strain_energy(
    mesh: &QuadMesh,
    geom: &Geometry,
    params: &MaterialParams,
    pf: Option<PhaseInput>,
    u: &[f64],
    mask: Option<&[bool]>,
) -> f64 {
    let mut w = 0.0;
    for e in 0..mesh.n_elements() {
        if !included(mask, e) {
            continue;
        }
        let p = params.scaled(mesh.stiffness_scale[e]);
        for g in &geom.qp[e] {
            let d = d_at(pf, mesh, e, g).max(0.0);
            w += g.w * material::bulk_energy_density(&strain_at(mesh, g, e, u), d, &p);
        }
    }
    w
}

/// `Gc ∫ [(1−d)²/(2l) + l/2 |∇d|² + αl/2 ∇d·M·∇d]` over the masked elements.
pub fn fracture_energy(mesh: &QuadMesh, geom: &Geometry, params: &MaterialParams, d: &[f64], mask: Option<&[bool]>) -> f64 {
    let m = params.structural();
    let l = params.l;
    let mut w = 0.0;
    for e in 0..mesh.n_elements() {
        if !included(mask, e) {
            continue;
        }
        let c = mesh.elements[e];
        for g in &geom.qp[e] {
            let dq: f64 = (0..4).map(|k| g.n[k] * d[c[k]]).sum();
            let mut gr = [0.0; 2];
            for k in 0..4 {
                gr[0] += g.dn[k][0] * d[c[k]];
                gr[1] += g.dn[k][1] * d[c[k]];
            }
            let grad2 = gr[0] * gr[0] + gr[1] * gr[1];
            let aniso = m.xx * gr[0] * gr[0] + 2.0 * m.xy * gr[0] * gr[1] + m.yy * gr[1] * gr[1];
            let gamma = (1.0 - dq).powi(2) / (2.0 * l) + 0.5 * l * grad2 + 0.5 * params.alpha * l * aniso;
            w += g.w * params.gc * gamma;
        }
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Bottom,
    Top,
    Left,
    Right,
    /// nodes on a straight segment
    Segment { from: [f64; 2], to: [f64; 2] },
}

impl Selector {
    pub fn matches(&self, p: [f64; 2], domain: [f64; 4], tol: f64) -> bool {
        match *self {
            Selector::Bottom => (p[1] - domain[1]).abs() <= tol,
            Selector::Top => (p[1] - domain[3]).abs() <= tol,
            Selector::Left => (p[0] - domain[0]).abs() <= tol,
            Selector::Right => (p[0] - domain[2]).abs() <= tol,
            Selector::Segment { from, to } => {
                let d = [to[0] - from[0], to[1] - from[1]];
                let len2 = d[0] * d[0] + d[1] * d[1];
                let r = [p[0] - from[0], p[1] - from[1]];
                if len2 == 0.0 {
                    return r[0].hypot(r[1]) <= tol;
                }
                let s = (r[0] * d[0] + r[1] * d[1]) / len2;
                let off = (r[0] * d[1] - r[1] * d[0]).abs() / len2.sqrt();
                off <= tol && s >= -tol && s <= 1.0 + tol
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletCondition {
    pub selector: Selector,
    pub component: usize,
    /// prescribed value is `factor · ū`
    pub factor: f64,
}

/// Dirichlet data evaluated geometrically so it applies to global and local meshes alike.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub domain: [f64; 4],
    pub conditions: Vec<DirichletCondition>,
    /// selector of the loaded boundary used for reactions, and its component
    pub loaded: Option<(Selector, usize)>,
}

impl BoundaryConditions {
    fn tol(&self) -> f64 {
        1e-9 * (self.domain[2] - self.domain[0]).hypot(self.domain[3] - self.domain[1])
    }

    /// Constrained (dof, value) pairs; the first matching condition wins.
    pub fn constraints(&self, mesh: &QuadMesh, ubar: f64) -> Vec<(usize, f64)> {
        let tol = self.tol();
        let mut out = std::collections::BTreeMap::new();
        for (n, p) in mesh.nodes.iter().enumerate() {
            for c in &self.conditions {
                if c.selector.matches(*p, self.domain, tol) {
                    out.entry(2 * n + c.component).or_insert(c.factor * ubar);
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn loaded_dofs(&self, mesh: &QuadMesh) -> Vec<usize> {
        let tol = self.tol();
        match self.loaded {
            None => Vec::new(),
            Some((sel, comp)) => mesh
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, p)| sel.matches(**p, self.domain, tol))
                .map(|(n, _)| 2 * n + comp)
                .collect(),
        }
    }
}

/// Dof bookkeeping for one field on one mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub per_node: usize,
    pub n_nodes: usize,
    pub constrained: Vec<(usize, f64)>,
}

impl DofMap {
    pub fn displacement(mesh: &QuadMesh, bcs: &BoundaryConditions, ubar: f64) -> Self {
        DofMap {
            per_node: 2,
            n_nodes: mesh.n_nodes(),
            constrained: bcs.constraints(mesh, ubar),
        }
    }

    pub fn phase_field(mesh: &QuadMesh) -> Self {
        DofMap {
            per_node: 1,
            n_nodes: mesh.n_nodes(),
            constrained: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.per_node * self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        self.per_node * node + comp
    }

    pub fn is_constrained(&self) -> Vec<bool> {
        let mut m = vec![false; self.len()];
        for &(i, _) in &self.constrained {
            m[i] = true;
        }
        m
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        let c = self.is_constrained();
        (0..self.len()).filter(|&i| !c[i]).collect()
    }
}

/// Trace and mortar matrices on the interface, scalar per node; the vector
/// versions follow from `kron_i2`.
#[derive(Clone, Debug)]
pub struct InterfaceMatrices {
    /// global interface nodes, the u_Γ and λ_C carriers (J_G)
    pub g_nodes: Vec<usize>,
    /// local interface nodes, the λ_L carrier (J_L)
    pub l_nodes: Vec<usize>,
    pub lg: Mat<f64>,
    pub ll: Mat<f64>,
    pub tl: Mat<f64>,
}

fn edge_mass(m: &mut Mat<f64>, a: usize, b: usize, h: f64) {
    m[(a, a)] += h / 3.0;
    m[(b, b)] += h / 3.0;
    m[(a, b)] += h / 6.0;
    m[(b, a)] += h / 6.0;
}

pub fn interface_mass_matrices(
    gmesh: &QuadMesh,
    trace_g: &InterfaceTrace,
    lmesh: &QuadMesh,
    trace_l: &InterfaceTrace,
) -> Result<InterfaceMatrices> {
    let g_nodes = trace_g.nodes();
    let l_nodes = trace_l.nodes();
    let gi: std::collections::HashMap<usize, usize> = g_nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let li: std::collections::HashMap<usize, usize> = l_nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let (mg, ml) = (g_nodes.len(), l_nodes.len());
    let mut lg = Mat::zeros(mg, mg);
    let mut tl = Mat::zeros(ml, ml);
    let mut ll = Mat::zeros(ml, mg);
    for e in &trace_g.edges {
        edge_mass(&mut lg, gi[&e.nodes[0]], gi[&e.nodes[1]], gmesh.segment_length(e.nodes[0], e.nodes[1]));
    }
    for e in &trace_l.edges {
        edge_mass(&mut tl, li[&e.nodes[0]], li[&e.nodes[1]], lmesh.segment_length(e.nodes[0], e.nodes[1]));
    }
    let tol = 1e-12 * gmesh.diameter().max(lmesh.diameter());
    let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    for (idx, le) in trace_l.edges.iter().enumerate() {
        let p = lmesh.nodes[le.nodes[0]];
        let q = lmesh.nodes[le.nodes[1]];
        let llen = (q[0] - p[0]).hypot(q[1] - p[1]);
        let mut covered = 0.0;
        for ge in &trace_g.edges {
            let a = gmesh.nodes[ge.nodes[0]];
            let b = gmesh.nodes[ge.nodes[1]];
            let glen = (b[0] - a[0]).hypot(b[1] - a[1]);
            let t = [(b[0] - a[0]) / glen, (b[1] - a[1]) / glen];
            let param = |x: [f64; 2]| -> Option<f64> {
                let d = [x[0] - a[0], x[1] - a[1]];
                let off = (d[0] * t[1] - d[1] * t[0]).abs();
                (off <= tol).then_some(d[0] * t[0] + d[1] * t[1])
            };
            let (Some(sp), Some(sq)) = (param(p), param(q)) else { continue };
            let s0 = sp.min(sq).max(0.0);
            let s1 = sp.max(sq).min(glen);
            if s1 - s0 <= tol {
                continue;
            }
            covered += s1 - s0;
            let (ga, gb) = (gi[&ge.nodes[0]], gi[&ge.nodes[1]]);
            let (la, lb) = (li[&le.nodes[0]], li[&le.nodes[1]]);
            for r in gp {
                let s = s0 + r * (s1 - s0);
                let w = 0.5 * (s1 - s0);
                let ng = [1.0 - s / glen, s / glen];
                let tl_ = (s - sp) / (sq - sp);
                let nl = [1.0 - tl_, tl_];
                for (i, &row) in [la, lb].iter().enumerate() {
                    for (j, &col) in [ga, gb].iter().enumerate() {
                        ll[(row, col)] += w * nl[i] * ng[j];
                    }
                }
            }
        }
        if (covered - llen).abs() > 1e-9 * llen {
            return Err(Error::Projection {
                segment: idx,
                reason: format!("local segment covered {covered} of {llen} by the global trace"),
            });
        }
    }
    Ok(InterfaceMatrices {
        g_nodes,
        l_nodes,
        lg,
        ll,
        tl,
    })
}

pub fn gather(u: &[f64], nodes: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * nodes.len());
    for &n in nodes {
        out.push(u[2 * n]);
        out.push(u[2 * n + 1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, extract_interface_mask, project_interface, refine_region_to_local, TraceSide};
    use proptest::prelude::*;

    fn params() -> MaterialParams {
        MaterialParams {
            lambda: 121.15,
            mu: 80.77,
            chi: 50.0,
            xi: 2.0,
            alpha: 50.0,
            gc: 2.7e-3,
            l: 0.1,
            kappa: 1e-10,
            fiber_angle: 0.4,
        }
    }

    fn dense(sys: &SparseSystem) -> Mat<f64> {
        let mut m = Mat::zeros(sys.n, sys.n);
        for &(i, j, v) in &sys.triplets {
            m[(i, j)] += v;
        }
        m
    }

    #[test]
    fn zero_state_zero_residual() {
        let m = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let s = assemble_displacement(&m, &g, &params(), None, &[0.0; 8], None, false);
        assert!(s.rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_matches_dense_oracle() {
        // oracle: K = ∫ Bᵀ C B over a unit square with the undamaged anisotropic tensor
        let m = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let p = params();
        let u: Vec<f64> = m.nodes.iter().flat_map(|x| [1e-4 * x[0], 2e-4 * x[0] + 5e-5 * x[1]]).collect();
        let s = assemble_displacement(&m, &g, &p, None, &u, None, true);
        let k = dense(&s);
        let ku: Vec<f64> = (0..8).map(|i| (0..8).map(|j| k[(i, j)] * u[j]).sum()).collect();
        let eps = Sym2::new(1e-4, 5e-5, 1e-4);
        let c = material::tangent(&eps, 1.0, &p);
        // uniform strain: internal force = ∫ Bᵀ σ with σ = C ε (law is linear at d=1)
        let sig = material::voigt_apply(&c, &eps);
        let mut oracle = [0.0; 8];
        let conn = m.elements[0];
        for (xi, eta) in GAUSS_POINTS {
            let dref = shape_derivatives(xi, eta);
            for a in 0..4 {
                let (bx, by) = (2.0 * dref[a][0], 2.0 * dref[a][1]);
                oracle[2 * conn[a]] += 0.25 * (bx * sig.xx + by * sig.xy);
                oracle[2 * conn[a] + 1] += 0.25 * (by * sig.yy + bx * sig.xy);
            }
        }
        for i in 0..8 {
            assert!((ku[i] - oracle[i]).abs() < 1e-12, "{i}: {} vs {}", ku[i], oracle[i]);
            assert!((s.rhs[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_modes_of_element() {
        let m = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let s = assemble_displacement(&m, &g, &params(), None, &[0.0; 8], None, true);
        let k = dense(&s);
        let ev = k.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let top = ev.iter().cloned().fold(0.0f64, f64::max);
        let zeros = ev.iter().filter(|v| v.abs() < 1e-10 * top).count();
        assert_eq!(zeros, 3);
        assert!(ev.iter().all(|&v| v > -1e-10 * top));
    }

    #[test]
    fn patch_test() {
        let m = build_structured_mesh(1.0, 1.0, 2, 2, &[]).unwrap();
        let mut m = m;
        m.nodes[4] = [0.55, 0.42];
        let g = Geometry::new(&m).unwrap();
        let u: Vec<f64> = m.nodes.iter().flat_map(|x| [1e-3 * x[0] - 2e-4 * x[1], 3e-4 * x[0] + 5e-4 * x[1]]).collect();
        let s = assemble_displacement(&m, &g, &params(), None, &u, None, false);
        assert!(s.rhs[8].abs() < 1e-12 && s.rhs[9].abs() < 1e-12);
    }

    #[test]
    fn phase_field_intact_and_homogeneous() {
        let m = build_structured_mesh(1.0, 1.0, 3, 3, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let p = params();
        let h = HistoryField::zeros(9);
        let d = assemble_phase_field(&m, &g, &p, &h, None).solve_spd().unwrap();
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let m1 = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        let g1 = Geometry::new(&m1).unwrap();
        let mut h = HistoryField::zeros(1);
        h.values[0] = [3.5; 4];
        let d = assemble_phase_field(&m1, &g1, &p, &h, None).solve_spd().unwrap();
        let oracle = 1.0 / (1.0 + 2.0 * (1.0 - p.kappa) * 3.5);
        assert!(d.iter().all(|v| (v - oracle).abs() < 1e-13));
        let r = phase_field_residual(&m1, &g1, &p, &h, &d, None);
        assert!(r.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn phase_field_alpha_zero_is_isotropic() {
        let m = build_structured_mesh(1.0, 1.0, 2, 2, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let a = MaterialParams { alpha: 0.0, ..params() };
        let b = MaterialParams { alpha: 0.0, fiber_angle: 1.3, ..params() };
        let h = HistoryField { values: vec![[0.3, 1.0, 2.0, 0.0]; 4] };
        let mut sa = assemble_phase_field(&m, &g, &a, &h, None).triplets;
        let mut sb = assemble_phase_field(&m, &g, &b, &h, None).triplets;
        sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(sa, sb);
    }

    #[test]
    fn fracture_energy_broken_square() {
        let m = build_structured_mesh(1.0, 1.0, 2, 2, &[]).unwrap();
        let g = Geometry::new(&m).unwrap();
        let p = params();
        let e = fracture_energy(&m, &g, &p, &[0.0; 9], None);
        assert!((e - p.gc / (2.0 * p.l)).abs() < 1e-15);
    }

    #[test]
    fn mortar_matching_one_element() {
        let g = build_structured_mesh(1.0, 1.0, 3, 3, &[]).unwrap();
        let region: Vec<bool> = (0..9).map(|e| e == 4).collect();
        let tg = extract_interface_mask(&g, &region, TraceSide::Global);
        let l = refine_region_to_local(&g, &[4], 1, None).unwrap();
        let tl = project_interface(&tg, &g, &l.mesh, TraceSide::Local, None).unwrap();
        let im = interface_mass_matrices(&g, &tg, &l.mesh, &tl).unwrap();
        let h = 1.0 / 3.0;
        for i in 0..4 {
            for j in 0..4 {
                assert!((im.lg[(i, j)] - im.ll[(i, j)]).abs() < 1e-15);
                assert!((im.lg[(i, j)] - im.tl[(i, j)]).abs() < 1e-15);
            }
            assert!((im.lg[(i, i)] - 2.0 * h / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mortar_factor_two_segment() {
        // oracle: ∫ N_i^L N_j^G over [0,1] with local hat functions at 0, 1/2, 1
        let g = build_structured_mesh(1.0, 1.0, 1, 2, &[]).unwrap();
        let region = vec![true, false];
        let tg = extract_interface_mask(&g, &region, TraceSide::Global).excluding_boundary(&g);
        assert_eq!(tg.len(), 1);
        let l = refine_region_to_local(&g, &[0], 2, None).unwrap();
        let tl = project_interface(&tg, &g, &l.mesh, TraceSide::Local, None).unwrap();
        let im = interface_mass_matrices(&g, &tg, &l.mesh, &tl).unwrap();
        assert_eq!((im.ll.nrows(), im.ll.ncols()), (3, 2));
        let x = |n: usize| l.mesh.nodes[n][0];
        let gx = |n: usize| g.nodes[n][0];
        for (i, &ln) in im.l_nodes.iter().enumerate() {
            for (j, &gn) in im.g_nodes.iter().enumerate() {
                let exact = {
                    // piecewise quadratic integrated by Simpson on each half
                    let hat = |t: f64| (1.0 - (t - x(ln)).abs() / 0.5).max(0.0);
                    let lin = |t: f64| 1.0 - (t - gx(gn)).abs();
                    let f = |t: f64| hat(t) * lin(t);
                    let simpson = |a: f64, b: f64| (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
                    simpson(0.0, 0.5) + simpson(0.5, 1.0)
                };
                assert!((im.ll[(i, j)] - exact).abs() < 1e-14, "{i}{j}");
            }
        }
        let rows: Vec<f64> = (0..3).map(|i| im.ll[(i, 0)] + im.ll[(i, 1)]).collect();
        let mut trib: Vec<f64> = rows.clone();
        trib.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((trib[0] - 0.25).abs() < 1e-15 && (trib[2] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn mortar_affine_consistency(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, f in 1usize..5) {
            let g = build_structured_mesh(1.0, 1.0, 4, 4, &[]).unwrap();
            let ids = [5usize, 6, 9];
            let region: Vec<bool> = (0..16).map(|e| ids.contains(&e)).collect();
            let tg = extract_interface_mask(&g, &region, TraceSide::Global);
            let l = refine_region_to_local(&g, &ids, f, None).unwrap();
            let tl = project_interface(&tg, &g, &l.mesh, TraceSide::Local, None).unwrap();
            let im = interface_mass_matrices(&g, &tg, &l.mesh, &tl).unwrap();
            let fun = |p: [f64; 2]| a + b * p[0] + c * p[1];
            let fg: Vec<f64> = im.g_nodes.iter().map(|&n| fun(g.nodes[n])).collect();
            let ones_l = vec![1.0; im.l_nodes.len()];
            let ones_g = vec![1.0; im.g_nodes.len()];
            let via_l: f64 = crate::linalg::mat_t_vec(&im.ll, &ones_l).iter().zip(&fg).map(|(x, y)| x * y).sum();
            let via_g: f64 = crate::linalg::mat_t_vec(&im.lg, &ones_g).iter().zip(&fg).map(|(x, y)| x * y).sum();
            prop_assert!((via_l - via_g).abs() < 1e-12);
        }

        #[test]
        fn tangent_matches_fd_of_residual(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = build_structured_mesh(1.0, 1.0, 2, 2, &[]).unwrap();
            let g = Geometry::new(&m).unwrap();
            let p = params();
            let u: Vec<f64> = (0..18).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            let d: Vec<f64> = (0..9).map(|_| rng.random_range(0.2..1.0)).collect();
            let pf = Some(PhaseInput { d: &d, active: None });
            let k = dense(&assemble_displacement(&m, &g, &p, pf, &u, None, true));
            let dir: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = 1e-7 * 1e-3;
            let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
            let rp = assemble_displacement(&m, &g, &p, pf, &up, None, false).rhs;
            let rm = assemble_displacement(&m, &g, &p, pf, &um, None, false).rhs;
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let kd: Vec<f64> = (0..18).map(|i| (0..18).map(|j| k[(i, j)] * dir[j]).sum()).collect();
            let err = crate::linalg::diff_norm(&fd, &kd);
            prop_assert!(err <= 1e-6 * crate::linalg::norm(&kd), "{err}");
        }

        #[test]
        fn isotropic_phase_field_bounded_and_monotone(hs in proptest::collection::vec(0.0..80.0f64, 64), dh in proptest::collection::vec(0.0..5.0f64, 64)) {
            let m = build_structured_mesh(1.0, 1.0, 4, 4, &[]).unwrap();
            let g = Geometry::new(&m).unwrap();
            let p = MaterialParams { alpha: 0.0, l: 0.3, ..params() };
            let h0 = HistoryField { values: hs.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect() };
            let mut h1 = h0.clone();
            for (v, x) in h1.values.iter_mut().flatten().zip(&dh) {
                *v += x;
            }
            let d0 = assemble_phase_field(&m, &g, &p, &h0, None).solve_spd().unwrap();
            let d1 = assemble_phase_field(&m, &g, &p, &h1, None).solve_spd().unwrap();
            for (a, b) in d0.iter().zip(&d1) {
                prop_assert!(*b > 0.0 && *a <= 1.0 + 1e-12);
                prop_assert!(b - a <= 1e-12, "{a} -> {b}");
            }
        }

        #[test]
        fn phase_field_matrix_spd(hv in 0.0..50.0f64, alpha in 0.0..60.0f64, phi in -3.0..3.0f64) {
            let m = build_structured_mesh(1.0, 1.0, 2, 2, &[]).unwrap();
            let g = Geometry::new(&m).unwrap();
            let p = MaterialParams { alpha, fiber_angle: phi, ..params() };
            let h = HistoryField { values: vec![[hv, 0.0, hv * 0.5, 1.0]; 4] };
            let a = dense(&assemble_phase_field(&m, &g, &p, &h, None));
            for i in 0..9 { for j in 0..9 {
                prop_assert!((a[(i, j)] - a[(j, i)]).abs() < 1e-13);
            }}
            let ev = a.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
            prop_assert!(ev.iter().all(|&v| v > 0.0));
        }
    }
}
