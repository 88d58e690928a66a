//! Plain-text field files.
//!
//! ```text
//! darcylab-fields 1
//! kind cell-solution
//! dim 2
//! k_avg 1.3e-2 0 0 1.3e-2
//! block solid 1024
//! 0 0 1 1 ...
//! block W0.u0 1056
//! ...
//! ```
//!
//! Header lines are `key value...`; each `block name count` line is followed
//! by `count` whitespace-separated numbers. Values are written with
//! round-trip precision.

use std::fmt::Write as _;
use std::path::Path;

use crate::cell::CellSolution;
use crate::error::{Error, Result};
use crate::geometry::PerforatedDomain;
use crate::grid::FaceField;
use crate::stokes::FlowState;

const MAGIC: &str = "darcylab-fields 1";
const PER_LINE: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldFile {
    pub header: Vec<(String, String)>,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl FieldFile {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        for (k, v) in &self.header {
            let _ = writeln!(s, "{k} {v}");
        }
        for (name, values) in &self.blocks {
            let _ = writeln!(s, "block {name} {}", values.len());
            for chunk in values.chunks(PER_LINE) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(Error::Parse(format!("field file must start with `{MAGIC}`"))),
        }
        let mut out = FieldFile::default();
        while let Some((no, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if key != "block" {
                out.header.push((key.to_string(), rest.trim().to_string()));
                continue;
            }
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("line {}: expected `block <name> <count>`", no + 1)));
            };
            let count: usize = count
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad count `{count}`", no + 1)))?;
            let mut values = Vec::with_capacity(count);
            while values.len() < count {
                let Some((vno, vline)) = lines.next() else {
                    return Err(Error::Parse(format!("block {name}: expected {count} values, file ended")));
                };
                for tok in vline.split_whitespace() {
                    values.push(
                        tok.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("line {}: bad number `{tok}`", vno + 1)))?,
                    );
                }
            }
            if values.len() != count {
                return Err(Error::Parse(format!("block {name}: {} values, expected {count}", values.len())));
            }
            out.blocks.push((name.to_string(), values));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn matrix_line(m: &nalgebra::DMatrix<f64>) -> String {
    let mut v = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(format!("{:e}", m[(i, j)]));
        }
    }
    v.join(" ")
}

fn push_faces(file: &mut FieldFile, prefix: &str, u: &FaceField) {
    for (a, comp) in u.comps.iter().enumerate() {
        file.blocks.push((format!("{prefix}{a}"), comp.clone()));
    }
}

/// Correctors, cell pressures and the permeability header.
pub fn cell_file(cell: &CellSolution) -> FieldFile {
    let mut f = FieldFile::default();
    f.set("kind", "cell-solution");
    f.set("dim", cell.dim());
    f.set("resolution", cell.resolution());
    f.set("k_avg", matrix_line(&cell.k_avg));
    f.set("k_energy", matrix_line(&cell.k_energy));
    let mask = &cell.domain.obstacle;
    f.blocks.push((
        "solid".into(),
        mask.solid.iter().map(|s| if *s { 1.0 } else { 0.0 }).collect(),
    ));
    for (j, (w, pi)) in cell.w.iter().zip(&cell.pi).enumerate() {
        push_faces(&mut f, &format!("W{j}.u"), w);
        f.blocks.push((format!("pi{j}"), pi.clone()));
    }
    f
}

/// Velocity, pressure, forcing and masks of a solved flow.
pub fn flow_file(state: &FlowState, domain: &PerforatedDomain) -> FieldFile {
    let g = &state.grid;
    let mut f = FieldFile::default();
    f.set("kind", "flow-state");
    f.set("dim", g.dim());
    f.set("n_per_unit", g.n_per_unit());
    f.set("extent", g.extent());
    f.set("topology", format!("{:?}", g.topology()).to_lowercase());
    f.set("epsilon", state.epsilon);
    f.set("mu", state.mu);
    f.set("outer_iterations", state.stats.outer_iterations);
    f.set("momentum_residual", format!("{:e}", state.stats.momentum_residual));
    f.set("divergence_residual", format!("{:e}", state.stats.divergence_residual));
    f.blocks.push((
        "fluid".into(),
        domain.fluid_cells.iter().map(|s| if *s { 1.0 } else { 0.0 }).collect(),
    ));
    push_faces(&mut f, "u", &state.u);
    f.blocks.push(("p".into(), state.p.clone()));
    push_faces(&mut f, "f", &state.f);
    f
}
