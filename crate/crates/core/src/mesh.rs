//! Structured Q1 meshes, notch seams, interfaces and coarse/fine projections.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementTag {
    Global,
    Fictitious,
    Local,
}

/// Axis-aligned predefined crack carried by duplicated nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seam {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub nodes: [usize; 2],
    /// (element, local edge index 0..4)
    pub elements: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct QuadMesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    pub edges: Vec<Edge>,
    pub element_tags: Vec<ElementTag>,
    pub notch_seams: Vec<Seam>,
    pub stiffness_scale: Vec<f64>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl QuadMesh {
    pub fn from_parts(nodes: Vec<[f64; 2]>, elements: Vec<[usize; 4]>, seams: Vec<Seam>) -> Result<Self> {
        let mut edges: Vec<Edge> = Vec::new();
        let mut lookup = HashMap::new();
        for (e, conn) in elements.iter().enumerate() {
            for q in 0..4 {
                let a = conn[q];
                let b = conn[(q + 1) % 4];
                let k = edge_key(a, b);
                let idx = *lookup.entry(k).or_insert_with(|| {
                    edges.push(Edge {
                        nodes: [k.0, k.1],
                        elements: Vec::new(),
                    });
                    edges.len() - 1
                });
                edges[idx].elements.push((e, q));
                if edges[idx].elements.len() > 2 {
                    return Err(Error::Mesh(format!("edge {a}-{b} shared by more than two elements")));
                }
            }
        }
        let n = elements.len();
        let mesh = QuadMesh {
            nodes,
            elements,
            edges,
            element_tags: vec![ElementTag::Global; n],
            notch_seams: seams,
            stiffness_scale: vec![1.0; n],
            edge_lookup: lookup,
        };
        for e in 0..mesh.elements.len() {
            let x = mesh.element_coords(e);
            for (xi, eta) in crate::assembly::GAUSS_POINTS {
                let det = crate::assembly::jacobian(&x, xi, eta).0;
                if !(det > 0.0) {
                    return Err(Error::Jacobian { element: e, det });
                }
            }
        }
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 4] {
        let c = self.elements[e];
        [self.nodes[c[0]], self.nodes[c[1]], self.nodes[c[2]], self.nodes[c[3]]]
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let x = self.element_coords(e);
        [
            0.25 * (x[0][0] + x[1][0] + x[2][0] + x[3][0]),
            0.25 * (x[0][1] + x[1][1] + x[2][1] + x[3][1]),
        ]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let x = self.element_coords(e);
        let mut a = 0.0;
        for q in 0..4 {
            let p = x[q];
            let r = x[(q + 1) % 4];
            a += p[0] * r[1] - r[0] * p[1];
        }
        0.5 * a
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&edge_key(a, b)).copied()
    }

    pub fn edge_count(&self, a: usize, b: usize) -> usize {
        self.edge_index(a, b).map_or(0, |i| self.edges[i].elements.len())
    }

    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.nodes {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    pub fn diameter(&self) -> f64 {
        let b = self.bbox();
        (b[2] - b[0]).hypot(b[3] - b[1])
    }

    /// Element neighbours across shared edges.
    pub fn edge_neighbors(&self, e: usize) -> Vec<usize> {
        let c = self.elements[e];
        let mut out = Vec::new();
        for q in 0..4 {
            let i = self.edge_index(c[q], c[(q + 1) % 4]).unwrap();
            for &(o, _) in &self.edges[i].elements {
                if o != e {
                    out.push(o);
                }
            }
        }
        out
    }

    pub fn segment_length(&self, a: usize, b: usize) -> f64 {
        let p = self.nodes[a];
        let q = self.nodes[b];
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    pub fn typical_size(&self) -> f64 {
        self.element_area(0).sqrt()
    }
}

fn on_grid(v: f64, origin: f64, h: f64, n: usize) -> Option<usize> {
    let t = (v - origin) / h;
    let r = t.round();
    if (t - r).abs() < 1e-9 && r >= 0.0 && r <= n as f64 {
        Some(r as usize)
    } else {
        None
    }
}

pub fn build_structured_mesh(width: f64, height: f64, nx: usize, ny: usize, notches: &[Seam]) -> Result<QuadMesh> {
    build_structured_mesh_masked(width, height, nx, ny, notches, &|_| true)
}

/// Structured grid keeping only elements whose centre satisfies `keep`.
pub fn build_structured_mesh_masked(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    notches: &[Seam],
    keep: &dyn Fn([f64; 2]) -> bool,
) -> Result<QuadMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Mesh("nx and ny must be at least 1".into()));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Mesh("width and height must be positive".into()));
    }
    let hx = width / nx as f64;
    let hy = height / ny as f64;
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes: Vec<[f64; 2]> = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([i as f64 * hx, j as f64 * hy]);
        }
    }
    let mut elements: Vec<[usize; 4]> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }

    for (s_idx, seam) in notches.iter().enumerate() {
        let bad = |why: &str| Error::Mesh(format!("notch {s_idx} ({:?} -> {:?}): {why}", seam.start, seam.end));
        let horizontal = (seam.start[1] - seam.end[1]).abs() < 1e-12 * height;
        let vertical = (seam.start[0] - seam.end[0]).abs() < 1e-12 * width;
        if horizontal == vertical {
            return Err(bad("must be axis aligned with nonzero length"));
        }
        if horizontal {
            let j0 = on_grid(seam.start[1], 0.0, hy, ny).ok_or_else(|| bad("not on a mesh line"))?;
            let a = on_grid(seam.start[0], 0.0, hx, nx).ok_or_else(|| bad("endpoint not on a mesh node"))?;
            let b = on_grid(seam.end[0], 0.0, hx, nx).ok_or_else(|| bad("endpoint not on a mesh node"))?;
            let (ia, ib) = (a.min(b), a.max(b));
            if j0 == 0 || j0 == ny {
                return Err(bad("lies on the outer boundary"));
            }
            let mut dup = HashMap::new();
            for i in ia..=ib {
                let tip = (i == ia || i == ib) && i != 0 && i != nx;
                if !tip {
                    nodes.push(nodes[id(i, j0)]);
                    dup.insert(id(i, j0), nodes.len() - 1);
                }
            }
            for i in 0..nx {
                let e = j0 * nx + i;
                for k in [0, 1] {
                    if let Some(&n) = dup.get(&elements[e][k]) {
                        elements[e][k] = n;
                    }
                }
            }
        } else {
            let i0 = on_grid(seam.start[0], 0.0, hx, nx).ok_or_else(|| bad("not on a mesh line"))?;
            let a = on_grid(seam.start[1], 0.0, hy, ny).ok_or_else(|| bad("endpoint not on a mesh node"))?;
            let b = on_grid(seam.end[1], 0.0, hy, ny).ok_or_else(|| bad("endpoint not on a mesh node"))?;
            let (ja, jb) = (a.min(b), a.max(b));
            if i0 == 0 || i0 == nx {
                return Err(bad("lies on the outer boundary"));
            }
            let mut dup = HashMap::new();
            for j in ja..=jb {
                let tip = (j == ja || j == jb) && j != 0 && j != ny;
                if !tip {
                    nodes.push(nodes[id(i0, j)]);
                    dup.insert(id(i0, j), nodes.len() - 1);
                }
            }
            for j in 0..ny {
                let e = j * nx + i0;
                for k in [0, 3] {
                    if let Some(&n) = dup.get(&elements[e][k]) {
                        elements[e][k] = n;
                    }
                }
            }
        }
    }

    let kept: Vec<[usize; 4]> = elements
        .into_iter()
        .filter(|c| {
            let cx = 0.25 * (nodes[c[0]][0] + nodes[c[1]][0] + nodes[c[2]][0] + nodes[c[3]][0]);
            let cy = 0.25 * (nodes[c[0]][1] + nodes[c[1]][1] + nodes[c[2]][1] + nodes[c[3]][1]);
            keep([cx, cy])
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Mesh("mask removed every element".into()));
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut used = Vec::new();
    for c in &kept {
        for &n in c {
            if remap[n] == usize::MAX {
                remap[n] = usize::MAX - 1;
            }
        }
    }
    for (n, r) in remap.iter_mut().enumerate() {
        if *r != usize::MAX {
            *r = used.len();
            used.push(nodes[n]);
        }
    }
    let elements = kept.iter().map(|c| c.map(|n| remap[n])).collect();
    QuadMesh::from_parts(used, elements, notches.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceSide {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEdge {
    pub nodes: [usize; 2],
    pub owner: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceTrace {
    pub edges: Vec<TraceEdge>,
    pub side: TraceSide,
}

impl InterfaceTrace {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn total_length(&self, mesh: &QuadMesh) -> f64 {
        self.edges.iter().map(|e| mesh.segment_length(e.nodes[0], e.nodes[1])).sum()
    }

    /// Unique nodes in order of first appearance.
    pub fn nodes(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for e in &self.edges {
            for n in e.nodes {
                if seen.insert(n) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Drops segments lying on the outer boundary (or on notch lips).
    pub fn excluding_boundary(&self, mesh: &QuadMesh) -> InterfaceTrace {
        InterfaceTrace {
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| mesh.edge_count(e.nodes[0], e.nodes[1]) == 2)
                .collect(),
            side: self.side,
        }
    }
}

fn chain(mut edges: Vec<TraceEdge>) -> Vec<TraceEdge> {
    let n = edges.len();
    let mut ends = std::collections::HashSet::new();
    for e in &edges {
        ends.insert(e.nodes[1]);
    }
    let mut by_start: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        by_start.entry(e.nodes[0]).or_default().push(i);
    }
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(n);
    let starts: Vec<usize> = (0..n)
        .filter(|&i| !ends.contains(&edges[i].nodes[0]))
        .chain(0..n)
        .collect();
    for s in starts {
        if used[s] {
            continue;
        }
        let mut cur = s;
        loop {
            used[cur] = true;
            out.push(edges[cur]);
            let next = by_start
                .get(&edges[cur].nodes[1])
                .and_then(|c| c.iter().copied().find(|&i| !used[i]));
            match next {
                Some(i) => cur = i,
                None => break,
            }
        }
    }
    edges.clear();
    out
}

/// Edges with exactly one incident element inside `region`, oriented
/// counterclockwise with respect to that element and chained into polylines.
pub fn extract_interface_mask(mesh: &QuadMesh, region: &[bool], side: TraceSide) -> InterfaceTrace {
    let mut edges = Vec::new();
    for edge in &mesh.edges {
        let inside: Vec<_> = edge.elements.iter().filter(|(e, _)| region[*e]).collect();
        if inside.len() == 1 {
            let (e, q) = *inside[0];
            let c = mesh.elements[e];
            edges.push(TraceEdge {
                nodes: [c[q], c[(q + 1) % 4]],
                owner: e,
            });
        }
    }
    InterfaceTrace {
        edges: chain(edges),
        side,
    }
}

pub fn extract_interface(mesh: &QuadMesh, tag: ElementTag) -> InterfaceTrace {
    let region: Vec<bool> = mesh.element_tags.iter().map(|t| *t == tag).collect();
    let side = if tag == ElementTag::Local {
        TraceSide::Local
    } else {
        TraceSide::Global
    };
    extract_interface_mask(mesh, &region, side)
}

fn point_on_segment(p: [f64; 2], a: [f64; 2], t: [f64; 2], len: f64, tol: f64) -> Option<f64> {
    let d = [p[0] - a[0], p[1] - a[1]];
    let s = d[0] * t[0] + d[1] * t[1];
    let off = (d[0] * t[1] - d[1] * t[0]).abs();
    if off <= tol && s >= -tol && s <= len + tol {
        Some(s)
    } else {
        None
    }
}

/// Re-expresses `trace` (on `source`) with edges of `target`: fine sub-edges
/// when the target is finer, the containing coarse edge when it is coarser.
/// `owner_region` selects the owning element for edges shared by two elements.
pub fn project_interface(
    trace: &InterfaceTrace,
    source: &QuadMesh,
    target: &QuadMesh,
    side: TraceSide,
    owner_region: Option<&[bool]>,
) -> Result<InterfaceTrace> {
    let tol = 1e-12 * source.diameter().max(target.diameter());
    let owner_of = |edge: &Edge| -> usize {
        match owner_region {
            Some(r) => edge.elements.iter().find(|(e, _)| r[*e]).unwrap_or(&edge.elements[0]).0,
            None => edge.elements[0].0,
        }
    };
    let mut out: Vec<TraceEdge> = Vec::new();
    for (idx, se) in trace.edges.iter().enumerate() {
        let a = source.nodes[se.nodes[0]];
        let b = source.nodes[se.nodes[1]];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let t = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let lo = [a[0].min(b[0]) - tol, a[1].min(b[1]) - tol];
        let hi = [a[0].max(b[0]) + tol, a[1].max(b[1]) + tol];

        let mut subs: Vec<(f64, TraceEdge)> = Vec::new();
        let mut parent: Option<TraceEdge> = None;
        for edge in &target.edges {
            let p = target.nodes[edge.nodes[0]];
            let q = target.nodes[edge.nodes[1]];
            let inside = |x: [f64; 2]| x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1];
            if inside(p) && inside(q) {
                if let (Some(sp), Some(sq)) = (point_on_segment(p, a, t, len, tol), point_on_segment(q, a, t, len, tol)) {
                    if (sq - sp).abs() > tol {
                        let nodes = if sp < sq { edge.nodes } else { [edge.nodes[1], edge.nodes[0]] };
                        subs.push((0.5 * (sp + sq), TraceEdge { nodes, owner: owner_of(edge) }));
                    }
                }
            } else if parent.is_none() {
                let elen = (q[0] - p[0]).hypot(q[1] - p[1]);
                if elen <= len + tol {
                    continue;
                }
                let et = [(q[0] - p[0]) / elen, (q[1] - p[1]) / elen];
                if point_on_segment(a, p, et, elen, tol).is_some() && point_on_segment(b, p, et, elen, tol).is_some() {
                    let same = et[0] * t[0] + et[1] * t[1] > 0.0;
                    let nodes = if same { edge.nodes } else { [edge.nodes[1], edge.nodes[0]] };
                    parent = Some(TraceEdge { nodes, owner: owner_of(edge) });
                }
            }
        }
        if !subs.is_empty() {
            subs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            let covered: f64 = subs.iter().map(|(_, e)| target.segment_length(e.nodes[0], e.nodes[1])).sum();
            if (covered - len).abs() > 1e-9 * len {
                return Err(Error::Projection {
                    segment: idx,
                    reason: format!("target edges cover {covered} of length {len}"),
                });
            }
            for (_, e) in subs {
                out.push(e);
            }
        } else if let Some(p) = parent {
            if out.last() != Some(&p) {
                out.push(p);
            }
        } else {
            return Err(Error::Projection {
                segment: idx,
                reason: "no coincident edge in target mesh".into(),
            });
        }
    }
    Ok(InterfaceTrace { edges: out, side })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKey {
    Vertex(usize),
    /// global edge (low node, high node) and position counted from the low node
    Edge(usize, usize, usize),
    Interior(usize, usize, usize),
}

/// Refined copy of a set of global elements with its own numbering.
#[derive(Clone, Debug)]
pub struct LocalMesh {
    pub mesh: QuadMesh,
    pub factor: usize,
    pub region: Vec<usize>,
    pub parent: Vec<usize>,
    pub keys: Vec<NodeKey>,
    /// parent global element and its parametric coordinates per local node
    pub node_param: Vec<(usize, [f64; 2])>,
    key_index: HashMap<NodeKey, usize>,
}

impl LocalMesh {
    pub fn node_of(&self, key: &NodeKey) -> Option<usize> {
        self.key_index.get(key).copied()
    }
}

pub fn refine_region_to_local(
    global: &QuadMesh,
    element_ids: &[usize],
    factor: usize,
    heterogeneity: Option<&dyn Fn([f64; 2]) -> f64>,
) -> Result<LocalMesh> {
    if factor == 0 {
        return Err(Error::Mesh("refinement factor must be at least 1".into()));
    }
    if element_ids.is_empty() {
        return Err(Error::Mesh("local region is empty".into()));
    }
    let mut region: Vec<usize> = element_ids.to_vec();
    region.sort_unstable();
    region.dedup();
    if let Some(&e) = region.iter().find(|&&e| e >= global.n_elements()) {
        return Err(Error::Mesh(format!("element {e} outside the global mesh")));
    }
    let f = factor;
    let mut nodes = Vec::new();
    let mut keys = Vec::new();
    let mut node_param = Vec::new();
    let mut key_index: HashMap<NodeKey, usize> = HashMap::new();
    let mut elements = Vec::new();
    let mut parent = Vec::new();
    for &e in &region {
        let c = global.elements[e];
        let x = global.element_coords(e);
        let key = |i: usize, j: usize| -> NodeKey {
            let corner = match (i, j) {
                (0, 0) => Some(c[0]),
                (a, 0) if a == f => Some(c[1]),
                (a, b) if a == f && b == f => Some(c[2]),
                (0, b) if b == f => Some(c[3]),
                _ => None,
            };
            if let Some(n) = corner {
                return NodeKey::Vertex(n);
            }
            let on_edge = if j == 0 {
                Some((c[0], c[1], i))
            } else if i == f {
                Some((c[1], c[2], j))
            } else if j == f {
                Some((c[3], c[2], i))
            } else if i == 0 {
                Some((c[0], c[3], j))
            } else {
                None
            };
            match on_edge {
                Some((a, b, k)) if a < b => NodeKey::Edge(a, b, k),
                Some((a, b, k)) => NodeKey::Edge(b, a, f - k),
                None => NodeKey::Interior(e, i, j),
            }
        };
        let mut grid = vec![0usize; (f + 1) * (f + 1)];
        for j in 0..=f {
            for i in 0..=f {
                let k = key(i, j);
                let xi = -1.0 + 2.0 * i as f64 / f as f64;
                let eta = -1.0 + 2.0 * j as f64 / f as f64;
                let id = *key_index.entry(k).or_insert_with(|| {
                    let n = crate::assembly::shape(xi, eta);
                    let mut p = [0.0; 2];
                    for a in 0..4 {
                        p[0] += n[a] * x[a][0];
                        p[1] += n[a] * x[a][1];
                    }
                    nodes.push(p);
                    keys.push(k);
                    node_param.push((e, [xi, eta]));
                    nodes.len() - 1
                });
                grid[j * (f + 1) + i] = id;
            }
        }
        for j in 0..f {
            for i in 0..f {
                let g = |a: usize, b: usize| grid[b * (f + 1) + a];
                elements.push([g(i, j), g(i + 1, j), g(i + 1, j + 1), g(i, j + 1)]);
                parent.push(e);
            }
        }
    }
    let mut mesh = QuadMesh::from_parts(nodes, elements, global.notch_seams.clone())?;
    mesh.element_tags = vec![ElementTag::Local; mesh.n_elements()];
    if let Some(h) = heterogeneity {
        mesh.stiffness_scale = (0..mesh.n_elements()).map(|e| h(mesh.element_center(e))).collect();
    }
    Ok(LocalMesh {
        mesh,
        factor,
        region,
        parent,
        keys,
        node_param,
        key_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> QuadMesh {
        build_structured_mesh(1.0, 1.0, n, n, &[]).unwrap()
    }

    #[test]
    fn counts() {
        let m = unit(2);
        assert_eq!((m.n_nodes(), m.n_elements()), (9, 4));
        let seam = Seam {
            start: [0.0, 0.5],
            end: [0.5, 0.5],
        };
        let m = build_structured_mesh(1.0, 1.0, 2, 2, &[seam]).unwrap();
        assert_eq!((m.n_nodes(), m.n_elements()), (10, 4));
        let twins = m
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| p[0] == 0.0 && p[1] == 0.5)
            .count();
        assert_eq!(twins, 2);
    }

    #[test]
    fn double_edge_notch() {
        let notches = [
            Seam { start: [0.0, 5.5], end: [5.0, 5.5] },
            Seam { start: [20.0, 3.5], end: [15.0, 3.5] },
        ];
        let m = build_structured_mesh(20.0, 10.0, 40, 20, &notches).unwrap();
        assert_eq!(m.n_elements(), 800);
        // each seam: 10 segments, 10 duplicated nodes (boundary endpoint included, tip excluded)
        assert_eq!(m.n_nodes(), 41 * 21 + 20);
        let lips = m.edges.iter().filter(|e| e.elements.len() == 1).count();
        assert_eq!(lips, 2 * (40 + 20) + 4 * 10);
    }

    #[test]
    fn notch_off_grid_rejected() {
        let seam = Seam { start: [0.0, 0.3], end: [0.5, 0.3] };
        let err = build_structured_mesh(1.0, 1.0, 2, 2, &[seam]).unwrap_err();
        assert!(err.to_string().contains("mesh line"));
    }

    #[test]
    fn interface_counts() {
        let mut m = unit(3);
        m.element_tags[4] = ElementTag::Fictitious;
        assert_eq!(extract_interface(&m, ElementTag::Fictitious).len(), 4);
        m.element_tags[5] = ElementTag::Fictitious;
        assert_eq!(extract_interface(&m, ElementTag::Fictitious).len(), 6);
        let all = extract_interface(&m, ElementTag::Global);
        let full: Vec<bool> = vec![true; 9];
        let outer = extract_interface_mask(&m, &full, TraceSide::Global);
        assert_eq!(outer.len(), 12);
        assert!(outer.excluding_boundary(&m).is_empty());
        assert_eq!(all.len(), 12 - 2 + 6);
    }

    #[test]
    fn interface_is_closed_ccw_loop() {
        let mut m = unit(3);
        m.element_tags[4] = ElementTag::Fictitious;
        let t = extract_interface(&m, ElementTag::Fictitious);
        for w in 0..4 {
            assert_eq!(t.edges[w].nodes[1], t.edges[(w + 1) % 4].nodes[0]);
        }
    }

    #[test]
    fn refine_counts() {
        let m = unit(3);
        let l = refine_region_to_local(&m, &[4], 2, None).unwrap();
        assert_eq!((l.mesh.n_elements(), l.mesh.n_nodes()), (4, 9));
        let l = refine_region_to_local(&m, &[4, 5], 3, None).unwrap();
        assert_eq!(l.mesh.n_elements(), 18);
        assert_eq!(l.mesh.n_nodes(), 7 * 4);
        // conforming: internal edges are shared by two elements
        let boundary = l.mesh.edges.iter().filter(|e| e.elements.len() == 1).count();
        assert_eq!(boundary, 2 * (6 + 3));
    }

    #[test]
    fn refine_heterogeneity() {
        let m = build_structured_mesh(250.0, 250.0, 2, 2, &[]).unwrap();
        let inc = |p: [f64; 2]| if p[0] < 62.5 { 10.0 } else { 1.0 };
        let l = refine_region_to_local(&m, &[0], 4, Some(&inc)).unwrap();
        let hard = l.mesh.stiffness_scale.iter().filter(|&&s| s == 10.0).count();
        assert_eq!(hard, 8);
        let p = crate::material::MaterialParams::isotropic(6.16, 10.95, 9e-5, 1.0, 1e-10);
        let e = p.youngs_modulus();
        assert!((e - 25.85).abs() < 0.01);
        assert!((p.scaled(10.0).youngs_modulus() - 10.0 * e).abs() < 1e-9);
    }

    #[test]
    fn local_boundary_nodes_lie_on_global_edges() {
        let m = unit(4);
        let l = refine_region_to_local(&m, &[5, 6, 9], 3, None).unwrap();
        for e in l.mesh.edges.iter().filter(|e| e.elements.len() == 1) {
            for n in e.nodes {
                assert!(matches!(l.keys[n], NodeKey::Vertex(_) | NodeKey::Edge(..)));
            }
        }
    }

    #[test]
    fn projection_examples() {
        let mut m = unit(3);
        m.element_tags[4] = ElementTag::Fictitious;
        let tg = extract_interface(&m, ElementTag::Fictitious);
        let l = refine_region_to_local(&m, &[4], 2, None).unwrap();
        let tl = project_interface(&tg, &m, &l.mesh, TraceSide::Local, None).unwrap();
        assert_eq!(tl.len(), 8);
        for e in &tl.edges {
            assert!((l.mesh.segment_length(e.nodes[0], e.nodes[1]) - 1.0 / 6.0).abs() < 1e-14);
        }
        let region: Vec<bool> = (0..9).map(|e| e == 4).collect();
        let back = project_interface(&tl, &l.mesh, &m, TraceSide::Global, Some(&region)).unwrap();
        assert_eq!(back, tg);
        let same = project_interface(&tg, &m, &m, TraceSide::Global, Some(&region)).unwrap();
        assert_eq!(same, tg);
        assert!((tl.total_length(&l.mesh) - tg.total_length(&m)).abs() < 1e-12);
    }

    #[test]
    fn l_shaped_projection_keeps_order() {
        let m = unit(3);
        // L-shaped interface: three coarse edges around elements {0, 1, 3}
        let region: Vec<bool> = (0..9).map(|e| [0, 1, 3].contains(&e)).collect();
        let tg = extract_interface_mask(&m, &region, TraceSide::Global).excluding_boundary(&m);
        let l = refine_region_to_local(&m, &[0, 1, 3], 4, None).unwrap();
        let tl = project_interface(&tg, &m, &l.mesh, TraceSide::Local, None).unwrap();
        assert_eq!(tg.len(), 4);
        assert_eq!(tl.len(), 16);
        for w in tl.edges.windows(2) {
            assert_eq!(w[0].nodes[1], w[1].nodes[0]);
        }
        let sub: Vec<bool> = (0..9).map(|e| [0, 1].contains(&e)).collect();
        let three = extract_interface_mask(&m, &sub, TraceSide::Global).excluding_boundary(&m);
        assert_eq!(three.len(), 3);
        let l2 = refine_region_to_local(&m, &[0, 1], 4, None).unwrap();
        let t3 = project_interface(&three, &m, &l2.mesh, TraceSide::Local, None).unwrap();
        assert_eq!(t3.len(), 12);
        for w in t3.edges.windows(2) {
            assert_eq!(w[0].nodes[1], w[1].nodes[0]);
        }
    }

    #[test]
    fn notch_seam_splits_interface() {
        let seam = Seam { start: [0.0, 0.5], end: [0.5, 0.5] };
        let g = build_structured_mesh(1.0, 1.0, 4, 4, &[seam]).unwrap();
        let region: Vec<bool> = (0..16).map(|e| [5, 6, 9, 10].contains(&e)).collect();
        let tg = extract_interface_mask(&g, &region, TraceSide::Global).excluding_boundary(&g);
        assert_eq!(tg.len(), 8);
        let l = refine_region_to_local(&g, &[5, 6, 9, 10], 2, None).unwrap();
        let tl = project_interface(&tg, &g, &l.mesh, TraceSide::Local, None).unwrap();
        assert_eq!(tl.len(), 16);
        // seam point (0.25, 0.5) appears as two distinct nodes on each side
        let at = |m: &QuadMesh, t: &InterfaceTrace| {
            t.nodes().iter().filter(|&&n| m.nodes[n] == [0.25, 0.5]).count()
        };
        assert_eq!(at(&g, &tg), 2);
        assert_eq!(at(&l.mesh, &tl), 2);
    }
}
