//! Legacy ASCII VTK output of quad meshes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::QuadMesh;

/// A named field with 1 (scalar) or 2 (planar vector) components per entity.
pub struct Field<'a> {
    pub name: &'a str,
    pub data: &'a [f64],
    pub components: usize,
}

impl<'a> Field<'a> {
    pub fn scalar(name: &'a str, data: &'a [f64]) -> Self {
        Field { name, data, components: 1 }
    }

    pub fn vector(name: &'a str, data: &'a [f64]) -> Self {
        Field { name, data, components: 2 }
    }
}

fn write_fields(out: &mut String, fields: &[Field], count: usize) -> Result<()> {
    for f in fields {
        if f.data.len() != count * f.components {
            return Err(Error::Config(format!("field {} has {} values, expected {}", f.name, f.data.len(), count * f.components)));
        }
        match f.components {
            1 => {
                writeln!(out, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name).unwrap();
                for v in f.data {
                    writeln!(out, "{v:e}").unwrap();
                }
            }
            2 => {
                writeln!(out, "VECTORS {} double", f.name).unwrap();
                for c in f.data.chunks(2) {
                    writeln!(out, "{:e} {:e} 0", c[0], c[1]).unwrap();
                }
            }
            k => return Err(Error::Config(format!("unsupported component count {k}"))),
        }
    }
    Ok(())
}

pub fn to_string(mesh: &QuadMesh, title: &str, point: &[Field], cell: &[Field]) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(out, "POINTS {} double", mesh.n_nodes()).unwrap();
    for p in &mesh.nodes {
        writeln!(out, "{:e} {:e} 0", p[0], p[1]).unwrap();
    }
    let ne = mesh.n_elements();
    writeln!(out, "CELLS {ne} {}", 5 * ne).unwrap();
    for c in &mesh.elements {
        writeln!(out, "4 {} {} {} {}", c[0], c[1], c[2], c[3]).unwrap();
    }
    writeln!(out, "CELL_TYPES {ne}").unwrap();
    for _ in 0..ne {
        writeln!(out, "9").unwrap();
    }
    if !point.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.n_nodes()).unwrap();
        write_fields(&mut out, point, mesh.n_nodes())?;
    }
    if !cell.is_empty() {
        writeln!(out, "CELL_DATA {ne}").unwrap();
        write_fields(&mut out, cell, ne)?;
    }
    Ok(out)
}

pub fn write(path: &Path, mesh: &QuadMesh, title: &str, point: &[Field], cell: &[Field]) -> Result<()> {
    std::fs::write(path, to_string(mesh, title, point, cell)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn layout() {
        let m = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        let d = [1.0, 0.5, 0.25, 1.0];
        let u = [0.0; 8];
        let s = to_string(&m, "t", &[Field::scalar("d", &d), Field::vector("u", &u)], &[Field::scalar("h", &[2.0])]).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\nt\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 4 double\n"));
        let c = m.elements[0];
        assert!(s.contains(&format!("CELLS 1 5\n4 {} {} {} {}\nCELL_TYPES 1\n9\n", c[0], c[1], c[2], c[3])));
        assert!(s.contains("POINT_DATA 4\nSCALARS d double 1\nLOOKUP_TABLE default\n1e0\n5e-1\n"));
        assert!(s.contains("VECTORS u double\n0e0 0e0 0\n"));
        assert!(s.contains("CELL_DATA 1\nSCALARS h double 1\nLOOKUP_TABLE default\n2e0\n"));
    }

    #[test]
    fn size_mismatch_rejected() {
        let m = build_structured_mesh(1.0, 1.0, 1, 1, &[]).unwrap();
        assert!(to_string(&m, "t", &[Field::scalar("d", &[1.0])], &[]).is_err());
    }
}
