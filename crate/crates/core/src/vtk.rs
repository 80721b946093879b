//! Legacy ASCII VTK (version 3.0) output for meshes and nodal fields.
//!
//! Floats are written with 17 significant digits so files are
//! byte-identical across runs and platforms.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::fem::{ensure_len, NodalField};
use crate::io::fmt_f64;
use crate::mesh::Mesh;

const VTK_TRIANGLE: u8 = 5;

/// Point data attached to a VTK file.
pub enum PointData<'a> {
    Vectors(&'a str, &'a NodalField),
    Scalars(&'a str, Vec<f64>),
}

/// Renders an `UNSTRUCTURED_GRID` with the given point data.
pub fn render(mesh: &Mesh, title: &str, data: &[PointData<'_>]) -> Result<String> {
    let n = mesh.node_count();
    let mut s = String::new();
    // fmt::Write into a String cannot fail
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.lines().next().unwrap_or(""));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {n} double");
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} {}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(0.0));
    }
    let e = mesh.element_count();
    let _ = writeln!(s, "CELLS {e} {}", 4 * e);
    for t in mesh.elements() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {e}");
    for _ in 0..e {
        let _ = writeln!(s, "{VTK_TRIANGLE}");
    }
    if !data.is_empty() {
        let _ = writeln!(s, "POINT_DATA {n}");
    }
    for d in data {
        match d {
            PointData::Vectors(name, field) => {
                ensure_len(field.len(), n)?;
                let _ = writeln!(s, "VECTORS {name} double");
                for v in field.iter() {
                    let _ = writeln!(s, "{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
                }
            }
            PointData::Scalars(name, values) => {
                ensure_len(values.len(), n)?;
                let _ = writeln!(s, "SCALARS {name} double 1");
                let _ = writeln!(s, "LOOKUP_TABLE default");
                for v in values {
                    let _ = writeln!(s, "{}", fmt_f64(*v));
                }
            }
        }
    }
    Ok(s)
}

/// Writes `field` as vectors named `name` plus its nodal modulus.
pub fn write_field(path: &Path, mesh: &Mesh, title: &str, name: &str, field: &NodalField) -> Result<()> {
    let modulus = field.iter().map(|v| v.norm()).collect();
    let body = render(
        mesh,
        title,
        &[PointData::Vectors(name, field), PointData::Scalars("modulus", modulus)],
    )?;
    std::fs::File::create(path)?.write_all(body.as_bytes())?;
    Ok(())
}

pub fn write_mesh(path: &Path, mesh: &Mesh, title: &str) -> Result<()> {
    std::fs::File::create(path)?.write_all(render(mesh, title, &[])?.as_bytes())?;
    Ok(())
}
