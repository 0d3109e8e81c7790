//! CSV sinks. Every table starts with a header row; numbers are written in
//! full-precision scientific notation so that output is bit-reproducible.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;
use vanroos::device::Device;
use vanroos::transient::{BlowUpReport, CarrierState};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// In-memory CSV table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| num(*v)).collect());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| cells.iter().map(|c| escape(c)).collect::<Vec<_>>().join(",");
        writeln!(out, "{}", line(&self.header)).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", line(r)).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.render())
    }
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Cell centers followed by doping, potential, quasi-Fermi levels and
/// densities.
pub fn field_snapshot(device: &Device, state: &CarrierState) -> Table {
    let dim = device.mesh.dimension;
    let coords = ["x", "y"];
    let mut table = Table::new(
        coords[..dim]
            .iter()
            .copied()
            .chain(["region", "doping", "phi", "Phi1", "Phi2", "u1", "u2"]),
    );
    for (i, c) in device.mesh.cells.iter().enumerate() {
        let mut row: Vec<String> = c.center[..dim].iter().map(|v| num(*v)).collect();
        row.push(device.region(i).name.clone());
        for v in [
            device.mesh.doping[i],
            state.phi[i],
            state.quasi_fermi[0][i],
            state.quasi_fermi[1][i],
            state.u[0][i],
            state.u[1][i],
        ] {
            row.push(num(v));
        }
        table.push(row);
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowUpFile {
    pub detected: bool,
    pub t_star: Option<f64>,
    pub reason: Option<String>,
    /// `[t, norm]` samples.
    pub history: Vec<[f64; 2]>,
    pub strictly_increasing_tail: bool,
}

impl From<&BlowUpReport> for BlowUpFile {
    fn from(r: &BlowUpReport) -> Self {
        let h = &r.history;
        let tail = h.len() >= 3 && h[h.len() - 3..].windows(2).all(|w| w[0].1 < w[1].1);
        Self {
            detected: r.detected,
            t_star: r.t_star,
            reason: r.reason.clone(),
            history: h.iter().map(|&(t, n)| [t, n]).collect(),
            strictly_increasing_tail: tail,
        }
    }
}
