//! Device description and tensor-product meshing.
//!
//! Devices are axis-aligned boxes in one or two dimensions, tiled by
//! material layers with diagonal permittivity and mobility tensors. The
//! boundary is partitioned into Dirichlet contacts, Robin (capacitive)
//! segments and the remaining homogeneous-Neumann part, which may carry a
//! surface recombination model. Interior interfaces are planes between
//! layers on which interfacial recombination acts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recombination::SurfaceRecombination;

/// Piecewise-linear time function, constant outside its sample range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant(0.0)
    }
}

impl From<f64> for Schedule {
    fn from(v: f64) -> Self {
        Schedule::Constant(v)
    }
}

impl Schedule {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Table { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0];
                }
                for k in 1..times.len() {
                    if t <= times[k] {
                        let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                        return values[k - 1] + w * (values[k] - values[k - 1]);
                    }
                }
                values[values.len() - 1]
            }
        }
    }

    fn check(&self, what: &str) -> Option<String> {
        match self {
            Schedule::Constant(v) if !v.is_finite() => Some(format!("{what}: value is not finite")),
            Schedule::Constant(_) => None,
            Schedule::Table { times, values } => {
                if times.len() != values.len() || times.is_empty() {
                    Some(format!("{what}: times and values must be nonempty and of equal length"))
                } else if times.windows(2).any(|w| !(w[1] > w[0])) {
                    Some(format!("{what}: sample times must be strictly increasing"))
                } else if values.iter().chain(times).any(|v| !v.is_finite()) {
                    Some(format!("{what}: samples must be finite"))
                } else {
                    None
                }
            }
        }
    }
}

/// A side of the bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "x-")]
    XMin,
    #[serde(rename = "x+")]
    XMax,
    #[serde(rename = "y-")]
    YMin,
    #[serde(rename = "y+")]
    YMax,
}

impl Side {
    pub fn axis(self) -> usize {
        match self {
            Side::XMin | Side::XMax => 0,
            Side::YMin | Side::YMax => 1,
        }
    }

    pub fn is_max(self) -> bool {
        matches!(self, Side::XMax | Side::YMax)
    }

    /// Outward normal component along [`Side::axis`].
    pub fn outward_sign(self) -> f64 {
        if self.is_max() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Diagonal mobility tensors of both carriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mobility {
    pub electrons: Vec<f64>,
    pub holes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialRegion {
    #[serde(default)]
    pub name: String,
    /// `[lo, hi]` per axis.
    pub bounds: Vec<[f64; 2]>,
    /// Diagonal permittivity tensor, one entry per axis.
    pub permittivity: Vec<f64>,
    pub mobility: Mobility,
}

impl MaterialRegion {
    pub fn contains(&self, p: &[f64]) -> bool {
        self.bounds.iter().zip(p).all(|(b, &x)| x >= b[0] && x <= b[1])
    }

    fn measure(&self) -> f64 {
        self.bounds.iter().map(|b| b[1] - b[0]).product()
    }
}

/// Dirichlet contact. Either `bias` (ohmic contact: Φ₁ = −V, Φ₂ = V and
/// φ chosen for local charge neutrality) or the explicit triple
/// `phi` / `quasi_fermi` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contact {
    #[serde(default)]
    pub name: String,
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasi_fermi: Option<[Schedule; 2]>,
}

/// Capacitive boundary segment: ν·(ε∇φ) + ε_Γ φ = φ_Γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobinSegment {
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    pub capacity: f64,
    #[serde(default)]
    pub load: Schedule,
}

/// Part of the Neumann/Robin boundary carrying a surface recombination model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSegment {
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    pub model: SurfaceRecombination,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default)]
    pub contacts: Vec<Contact>,
    #[serde(default)]
    pub robin: Vec<RobinSegment>,
    #[serde(default)]
    pub surfaces: Vec<SurfaceSegment>,
}

/// Interior plane `x_axis = position`, optionally limited to `range` along
/// the other axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    pub axis: usize,
    pub position: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    pub model: SurfaceRecombination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopingBox {
    pub bounds: Vec<[f64; 2]>,
    pub value: f64,
}

/// Doping concentrated on mesh faces: either an interior plane
/// (`axis`/`position`) or a boundary `side`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheetDoping {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    pub density: f64,
}

/// Bulk doping is the sum of the boxes containing a cell center.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopingProfile {
    #[serde(default)]
    pub bulk: Vec<DopingBox>,
    #[serde(default)]
    pub sheets: Vec<SheetDoping>,
}

fn default_ellipticity() -> [f64; 2] {
    [1e-8, 1e8]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub dimension: usize,
    pub extent: Vec<f64>,
    pub layers: Vec<MaterialRegion>,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub interfaces: Vec<InterfaceSpec>,
    #[serde(default)]
    pub doping: DopingProfile,
    /// Admissible range `[low, high]` of every tensor entry.
    #[serde(default = "default_ellipticity")]
    pub ellipticity: [f64; 2],
}

impl DeviceSpec {
    /// Single-material 1D bar on `[0, length]` with unit coefficients and no
    /// boundary conditions; a convenience starting point for tests.
    pub fn uniform_1d(length: f64) -> Self {
        Self {
            dimension: 1,
            extent: vec![length],
            layers: vec![MaterialRegion {
                name: "bulk".into(),
                bounds: vec![[0.0, length]],
                permittivity: vec![1.0],
                mobility: Mobility {
                    electrons: vec![1.0],
                    holes: vec![1.0],
                },
            }],
            boundary: BoundarySpec::default(),
            interfaces: Vec::new(),
            doping: DopingProfile::default(),
            ellipticity: default_ellipticity(),
        }
    }

    pub fn domain_volume(&self) -> f64 {
        self.extent.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: &'static str, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}", v.message)?;
        }
        Ok(())
    }
}

fn ranges_overlap(a: Option<[f64; 2]>, b: Option<[f64; 2]>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a[0].max(b[0]) < a[1].min(b[1]),
        _ => true,
    }
}

/// Checks the structural and coercivity requirements of a device.
pub fn validate_device(spec: &DeviceSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let dim = spec.dimension;
    if !(dim == 1 || dim == 2) {
        report.push("dimension", format!("dimension must be 1 or 2, got {dim}"));
        return report;
    }
    if spec.extent.len() != dim || spec.extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        report.push("extent", "extent must list one positive length per axis");
        return report;
    }
    let [low, high] = spec.ellipticity;
    if !(low > 0.0 && low <= high && high.is_finite()) {
        report.push("ellipticity", "ellipticity bounds must satisfy 0 < low <= high < inf");
    }

    let bound = |name: &str, what: &str, values: &[f64], report: &mut ValidationReport| {
        if values.len() != dim {
            report.push("tensor", format!("layer `{name}`: {what} needs {dim} diagonal entries"));
            return;
        }
        for &v in values {
            if !(v >= low) {
                report.push(
                    "ellipticity-low",
                    format!("layer `{name}`: {what} entry {v} violates the ellipticity lower bound {low}"),
                );
            } else if !(v <= high) {
                report.push(
                    "ellipticity-high",
                    format!("layer `{name}`: {what} entry {v} violates the ellipticity upper bound {high}"),
                );
            }
        }
    };

    if spec.layers.is_empty() {
        report.push("layers", "at least one material layer is required");
    }
    let mut layers_ok = true;
    for layer in &spec.layers {
        bound(&layer.name, "permittivity", &layer.permittivity, &mut report);
        bound(&layer.name, "electron mobility", &layer.mobility.electrons, &mut report);
        bound(&layer.name, "hole mobility", &layer.mobility.holes, &mut report);
        if layer.bounds.len() != dim
            || layer
                .bounds
                .iter()
                .zip(&spec.extent)
                .any(|(b, &e)| !(b[0] < b[1]) || b[0] < 0.0 || b[1] > e)
        {
            report.push(
                "layer-bounds",
                format!(
                    "layer `{}`: bounds must be nonempty boxes inside the domain",
                    layer.name
                ),
            );
            layers_ok = false;
        }
    }
    if layers_ok {
        for (i, a) in spec.layers.iter().enumerate() {
            for b in &spec.layers[i + 1..] {
                let overlap: f64 = a
                    .bounds
                    .iter()
                    .zip(&b.bounds)
                    .map(|(x, y)| (x[1].min(y[1]) - x[0].max(y[0])).max(0.0))
                    .product();
                if overlap > 0.0 {
                    report.push("layer-overlap", format!("layers `{}` and `{}` overlap", a.name, b.name));
                }
            }
        }
        let covered: f64 = spec.layers.iter().map(MaterialRegion::measure).sum();
        let total = spec.domain_volume();
        if !report.contains("layer-overlap") && (covered - total).abs() > 1e-12 * total {
            report.push("layer-gap", "layers do not tile the domain");
        }
    }

    for iface in &spec.interfaces {
        if iface.axis >= dim {
            report.push("interface", format!("interface axis {} out of range", iface.axis));
            continue;
        }
        let e = spec.extent[iface.axis];
        if !(iface.position > 0.0 && iface.position < e) {
            report.push(
                "interface-boundary",
                format!("interface at {} is not strictly inside the domain", iface.position),
            );
            continue;
        }
        let tol = 1e-12 * e;
        let on_layer_face = spec.layers.iter().any(|l| {
            l.bounds
                .get(iface.axis)
                .is_some_and(|b| (b[0] - iface.position).abs() <= tol || (b[1] - iface.position).abs() <= tol)
        });
        if !on_layer_face {
            report.push(
                "interface-off-layer",
                format!(
                    "interface at {} on axis {} is off a layer boundary",
                    iface.position, iface.axis
                ),
            );
        }
        if let Some(msg) = iface.model.check() {
            report.push("surface-model", msg);
        }
    }

    let b = &spec.boundary;
    for (i, c) in b.contacts.iter().enumerate() {
        if c.side.axis() >= dim {
            report.push(
                "side",
                format!("contact `{}` on a side the device does not have", c.name),
            );
        }
        match (&c.bias, &c.phi, &c.quasi_fermi) {
            (Some(bias), None, None) => {
                if let Some(m) = bias.check(&format!("contact `{}` bias", c.name)) {
                    report.push("schedule", m);
                }
            }
            (None, Some(phi), Some(qf)) => {
                for (s, what) in [(phi, "phi"), (&qf[0], "quasi_fermi[0]"), (&qf[1], "quasi_fermi[1]")] {
                    if let Some(m) = s.check(&format!("contact `{}` {what}", c.name)) {
                        report.push("schedule", m);
                    }
                }
            }
            _ => report.push(
                "contact",
                format!(
                    "contact `{}` needs either `bias` or both `phi` and `quasi_fermi`",
                    c.name
                ),
            ),
        }
        for other in &b.contacts[i + 1..] {
            if other.side == c.side && ranges_overlap(c.range, other.range) {
                report.push(
                    "segment-overlap",
                    format!("contacts `{}` and `{}` overlap", c.name, other.name),
                );
            }
        }
        for r in &b.robin {
            if r.side == c.side && ranges_overlap(c.range, r.range) {
                report.push(
                    "segment-overlap",
                    format!("contact `{}` overlaps a Robin segment", c.name),
                );
            }
        }
    }
    let mut positive_capacity = false;
    for r in &b.robin {
        if r.side.axis() >= dim {
            report.push("side", "Robin segment on a side the device does not have");
        }
        if !(r.capacity >= 0.0) || !r.capacity.is_finite() {
            report.push("capacity", format!("capacity must be nonnegative, got {}", r.capacity));
        } else if r.capacity > 0.0 {
            positive_capacity = true;
        }
        if let Some(m) = r.load.check("Robin load") {
            report.push("schedule", m);
        }
    }
    for s in &b.surfaces {
        if s.side.axis() >= dim {
            report.push("side", "surface segment on a side the device does not have");
        }
        if let Some(msg) = s.model.check() {
            report.push("surface-model", msg);
        }
        if b.contacts
            .iter()
            .any(|c| c.side == s.side && ranges_overlap(c.range, s.range))
        {
            report.push("segment-overlap", "surface recombination segment overlaps a contact");
        }
    }
    if b.contacts.is_empty() && !positive_capacity {
        report.push(
            "coercivity",
            "no Dirichlet contact and zero capacity: the Poisson operator is not coercive",
        );
    }
    for d in &spec.doping.bulk {
        if !d.value.is_finite() || d.bounds.len() != dim {
            report.push("doping", "bulk doping boxes need finite values and one range per axis");
        }
    }
    for s in &spec.doping.sheets {
        let plane = s.axis.is_some() && s.position.is_some();
        if s.side.is_some() == plane || !s.density.is_finite() {
            report.push(
                "doping",
                "sheet doping needs a finite density and either `side` or `axis`+`position`",
            );
        }
    }
    report
}

/// Boundary condition carried by a boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Dirichlet(usize),
    Robin(usize),
    /// Homogeneous Neumann, optionally with a surface recombination segment.
    Neumann(Option<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceKind {
    Interior {
        left: usize,
        right: usize,
        /// Center-to-center distance.
        distance: f64,
        interface: Option<usize>,
    },
    Boundary {
        cell: usize,
        side: Side,
        /// Distance from cell center to the face.
        distance: f64,
        tag: BoundaryTag,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub area: f64,
    pub center: [f64; 2],
    pub kind: FaceKind,
}

impl Face {
    /// Cells adjacent to this face.
    pub fn cells(&self) -> (usize, Option<usize>) {
        match self.kind {
            FaceKind::Interior { left, right, .. } => (left, Some(right)),
            FaceKind::Boundary { cell, .. } => (cell, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub center: [f64; 2],
    pub volume: f64,
    pub region: usize,
}

/// Cell-centered tensor-product mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub dimension: usize,
    /// Cells per axis; the second entry is 1 in 1D.
    pub shape: [usize; 2],
    pub spacing: [f64; 2],
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    /// `cell_faces[c][axis] = [low face, high face]`.
    pub cell_faces: Vec<[[usize; 2]; 2]>,
    /// Cellwise bulk doping.
    pub doping: Vec<f64>,
    /// Boundary faces per contact.
    pub contact_faces: Vec<Vec<usize>>,
    pub robin_faces: Vec<Vec<usize>>,
    pub surface_faces: Vec<Vec<usize>>,
    /// Interior faces per interface.
    pub interface_faces: Vec<Vec<usize>>,
    /// Faces carrying each sheet doping.
    pub sheet_faces: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.volume).collect()
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i + self.shape[0] * j
    }
}

fn snap(coord: f64, h: f64, n: usize, what: &str) -> Result<usize> {
    let k = (coord / h).round();
    if k < 0.0 || k > n as f64 || (coord - k * h).abs() > 1e-6 * h {
        return Err(Error::Geometry(format!(
            "{what} coordinate {coord} does not lie on a mesh face (spacing {h})"
        )));
    }
    Ok(k as usize)
}

fn in_range(range: Option<[f64; 2]>, x: f64) -> bool {
    range.is_none_or(|r| x >= r[0] && x <= r[1])
}

/// Builds the cell-centered tensor grid with `resolution[a]` uniform cells
/// along each axis. Every layer boundary, interface, doping box and segment
/// end point has to coincide with a grid face.
pub fn build_mesh(spec: &DeviceSpec, resolution: &[usize]) -> Result<Mesh> {
    let dim = spec.dimension;
    if !(dim == 1 || dim == 2) || spec.extent.len() != dim {
        return Err(Error::Geometry(format!("unsupported dimension {dim}")));
    }
    if resolution.len() != dim || resolution.iter().any(|&n| n < 2) {
        return Err(Error::Geometry(
            "resolution needs at least 2 cells along every axis".into(),
        ));
    }
    let shape = [resolution[0], if dim == 2 { resolution[1] } else { 1 }];
    let spacing = [
        spec.extent[0] / shape[0] as f64,
        if dim == 2 {
            spec.extent[1] / shape[1] as f64
        } else {
            1.0
        },
    ];

    for layer in &spec.layers {
        for (a, b) in layer.bounds.iter().enumerate().take(dim) {
            for &x in b {
                snap(x, spacing[a], shape[a], &format!("layer `{}` boundary", layer.name))?;
            }
        }
    }
    for iface in &spec.interfaces {
        if iface.axis >= dim {
            return Err(Error::Geometry(format!("interface axis {} out of range", iface.axis)));
        }
        snap(iface.position, spacing[iface.axis], shape[iface.axis], "interface")?;
    }
    for d in &spec.doping.bulk {
        for (a, b) in d.bounds.iter().enumerate().take(dim) {
            for &x in b {
                snap(x, spacing[a], shape[a], "doping box")?;
            }
        }
    }

    let (nx, ny) = (shape[0], shape[1]);
    let cell_volume = spacing[0] * spacing[1];
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let center = [
                (i as f64 + 0.5) * spacing[0],
                if dim == 2 { (j as f64 + 0.5) * spacing[1] } else { 0.0 },
            ];
            let p = &center[..dim];
            let mut owners = spec.layers.iter().enumerate().filter(|(_, l)| l.contains(p));
            let region = match (owners.next(), owners.next()) {
                (Some((r, _)), None) => r,
                (None, _) => {
                    return Err(Error::Geometry(format!(
                        "cell centered at {p:?} is not covered by any layer"
                    )))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::Geometry(format!(
                        "cell centered at {p:?} is covered by more than one layer"
                    )))
                }
            };
            cells.push(Cell {
                center,
                volume: cell_volume,
                region,
            });
        }
    }

    let b = &spec.boundary;
    let boundary_tag = |side: Side, t: f64| -> BoundaryTag {
        if let Some(k) = b.contacts.iter().position(|c| c.side == side && in_range(c.range, t)) {
            return BoundaryTag::Dirichlet(k);
        }
        if let Some(k) = b.robin.iter().position(|r| r.side == side && in_range(r.range, t)) {
            return BoundaryTag::Robin(k);
        }
        BoundaryTag::Neumann(b.surfaces.iter().position(|s| s.side == side && in_range(s.range, t)))
    };

    let mut faces = Vec::new();
    let mut cell_faces = vec![[[usize::MAX; 2]; 2]; nx * ny];
    let idx = |i: usize, j: usize| i + nx * j;
    let interface_at = |axis: usize, pos: f64, t: f64| {
        spec.interfaces
            .iter()
            .position(|f| f.axis == axis && (f.position - pos).abs() <= 1e-6 * spacing[axis] && in_range(f.range, t))
    };

    // Faces normal to x.
    let area_x = if dim == 2 { spacing[1] } else { 1.0 };
    for j in 0..ny {
        for i in 0..=nx {
            let x = i as f64 * spacing[0];
            let y = cells[idx(0, j)].center[1];
            let kind = if i == 0 || i == nx {
                let (side, cell) = if i == 0 {
                    (Side::XMin, idx(0, j))
                } else {
                    (Side::XMax, idx(nx - 1, j))
                };
                FaceKind::Boundary {
                    cell,
                    side,
                    distance: 0.5 * spacing[0],
                    tag: boundary_tag(side, y),
                }
            } else {
                FaceKind::Interior {
                    left: idx(i - 1, j),
                    right: idx(i, j),
                    distance: spacing[0],
                    interface: interface_at(0, x, y),
                }
            };
            let f = faces.len();
            if i > 0 {
                cell_faces[idx(i - 1, j)][0][1] = f;
            }
            if i < nx {
                cell_faces[idx(i, j)][0][0] = f;
            }
            faces.push(Face {
                axis: 0,
                area: area_x,
                center: [x, y],
                kind,
            });
        }
    }
    if dim == 2 {
        let area_y = spacing[0];
        for j in 0..=ny {
            for i in 0..nx {
                let y = j as f64 * spacing[1];
                let x = cells[idx(i, 0)].center[0];
                let kind = if j == 0 || j == ny {
                    let (side, cell) = if j == 0 {
                        (Side::YMin, idx(i, 0))
                    } else {
                        (Side::YMax, idx(i, ny - 1))
                    };
                    FaceKind::Boundary {
                        cell,
                        side,
                        distance: 0.5 * spacing[1],
                        tag: boundary_tag(side, x),
                    }
                } else {
                    FaceKind::Interior {
                        left: idx(i, j - 1),
                        right: idx(i, j),
                        distance: spacing[1],
                        interface: interface_at(1, y, x),
                    }
                };
                let f = faces.len();
                if j > 0 {
                    cell_faces[idx(i, j - 1)][1][1] = f;
                }
                if j < ny {
                    cell_faces[idx(i, j)][1][0] = f;
                }
                faces.push(Face {
                    axis: 1,
                    area: area_y,
                    center: [x, y],
                    kind,
                });
            }
        }
    }

    let collect = |pred: &dyn Fn(&Face) -> bool| -> Vec<usize> {
        faces
            .iter()
            .enumerate()
            .filter(|(_, f)| pred(f))
            .map(|(k, _)| k)
            .collect()
    };
    let contact_faces = (0..b.contacts.len())
        .map(|k| collect(&|f| matches!(f.kind, FaceKind::Boundary { tag: BoundaryTag::Dirichlet(c), .. } if c == k)))
        .collect();
    let robin_faces = (0..b.robin.len())
        .map(|k| collect(&|f| matches!(f.kind, FaceKind::Boundary { tag: BoundaryTag::Robin(c), .. } if c == k)))
        .collect();
    let surface_faces = (0..b.surfaces.len())
        .map(|k| {
            collect(&|f| matches!(f.kind, FaceKind::Boundary { tag: BoundaryTag::Neumann(Some(c)), .. } if c == k))
        })
        .collect();
    let interface_faces: Vec<Vec<usize>> = (0..spec.interfaces.len())
        .map(|k| collect(&|f| matches!(f.kind, FaceKind::Interior { interface: Some(c), .. } if c == k)))
        .collect();
    for (k, fs) in interface_faces.iter().enumerate() {
        if fs.is_empty() {
            return Err(Error::Geometry(format!(
                "interface {k} is not resolved by any mesh face"
            )));
        }
    }

    let mut sheet_faces = Vec::new();
    for (k, s) in spec.doping.sheets.iter().enumerate() {
        let tangential = |f: &Face, axis: usize| if dim == 2 { f.center[1 - axis] } else { 0.0 };
        let fs = if let Some(side) = s.side {
            collect(&|f| {
                matches!(f.kind, FaceKind::Boundary { side: fs, .. } if fs == side)
                    && in_range(s.range, tangential(f, side.axis()))
            })
        } else {
            let (axis, pos) = (s.axis.unwrap_or(usize::MAX), s.position.unwrap_or(f64::NAN));
            if axis >= dim {
                return Err(Error::Geometry(format!("sheet doping {k} has no valid axis")));
            }
            snap(pos, spacing[axis], shape[axis], "sheet doping")?;
            collect(&|f| {
                f.axis == axis
                    && (f.center[axis] - pos).abs() <= 1e-6 * spacing[axis]
                    && in_range(s.range, tangential(f, axis))
            })
        };
        if fs.is_empty() {
            return Err(Error::Geometry(format!(
                "sheet doping {k} does not touch any mesh face"
            )));
        }
        sheet_faces.push(fs);
    }

    let doping = cells
        .iter()
        .map(|c| {
            spec.doping
                .bulk
                .iter()
                .filter(|d| {
                    d.bounds
                        .iter()
                        .zip(&c.center[..dim])
                        .all(|(b, &x)| x >= b[0] && x <= b[1])
                })
                .map(|d| d.value)
                .sum()
        })
        .collect();

    Ok(Mesh {
        dimension: dim,
        shape,
        spacing,
        cells,
        faces,
        cell_faces,
        doping,
        contact_faces,
        robin_faces,
        surface_faces,
        interface_faces,
        sheet_faces,
    })
}

/// A validated device specification together with its mesh.
#[derive(Debug, Clone)]
pub struct Device {
    pub spec: DeviceSpec,
    pub mesh: Mesh,
}

impl Device {
    /// Validates and meshes `spec`.
    pub fn new(spec: DeviceSpec, resolution: &[usize]) -> Result<Self> {
        let report = validate_device(&spec);
        if !report.is_ok() {
            return Err(Error::InvalidDevice(report.to_string()));
        }
        Self::new_unchecked(spec, resolution)
    }

    /// Meshes `spec` without running [`validate_device`]; for tests that
    /// exercise degenerate coefficients.
    pub fn new_unchecked(spec: DeviceSpec, resolution: &[usize]) -> Result<Self> {
        let mesh = build_mesh(&spec, resolution)?;
        Ok(Self { spec, mesh })
    }

    pub fn region(&self, cell: usize) -> &MaterialRegion {
        &self.spec.layers[self.mesh.cells[cell].region]
    }

    pub fn has_dirichlet(&self) -> bool {
        self.mesh.contact_faces.iter().any(|f| !f.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recombination::SurfaceRecombination;

    fn two_layer_1d() -> DeviceSpec {
        let mut spec = DeviceSpec::uniform_1d(1.0);
        let mut right = spec.layers[0].clone();
        spec.layers[0].bounds = vec![[0.0, 0.5]];
        right.name = "right".into();
        right.bounds = vec![[0.5, 1.0]];
        spec.layers.push(right);
        spec.interfaces.push(InterfaceSpec {
            axis: 0,
            position: 0.5,
            range: None,
            model: SurfaceRecombination::Zero,
        });
        spec.boundary.contacts.push(Contact {
            name: "left".into(),
            side: Side::XMin,
            range: None,
            bias: Some(0.0.into()),
            phi: None,
            quasi_fermi: None,
        });
        spec
    }

    #[test]
    fn uniform_1d_grid() {
        let mesh = build_mesh(&DeviceSpec::uniform_1d(1.0), &[4]).unwrap();
        assert_eq!(mesh.cells.len(), 4);
        assert_eq!(mesh.faces.len(), 5);
        assert!(mesh.cells.iter().all(|c| (c.volume - 0.25).abs() < 1e-15));
    }

    #[test]
    fn interface_on_midpoint_face() {
        let mesh = build_mesh(&two_layer_1d(), &[4]).unwrap();
        assert_eq!(mesh.interface_faces, vec![vec![2]]);
        assert_eq!(mesh.cells[1].region, 0);
        assert_eq!(mesh.cells[2].region, 1);
    }

    #[test]
    fn tensor_grid_face_count() {
        let mut spec = DeviceSpec::uniform_1d(1.0);
        spec.dimension = 2;
        spec.extent = vec![1.0, 1.0];
        spec.layers[0].bounds = vec![[0.0, 1.0], [0.0, 1.0]];
        spec.layers[0].permittivity = vec![1.0, 1.0];
        spec.layers[0].mobility = Mobility {
            electrons: vec![1.0, 1.0],
            holes: vec![1.0, 1.0],
        };
        let mesh = build_mesh(&spec, &[4, 2]).unwrap();
        assert_eq!(mesh.cells.len(), 8);
        // (n+1)·m + n·(m+1) with n = 4, m = 2
        assert_eq!(mesh.faces.len(), 22);
    }

    #[test]
    fn non_snappable_layer_boundary_is_named() {
        let mut spec = two_layer_1d();
        spec.layers[0].bounds = vec![[0.0, 0.3]];
        spec.layers[1].bounds = vec![[0.3, 1.0]];
        spec.interfaces.clear();
        let err = build_mesh(&spec, &[4]).unwrap_err();
        assert!(matches!(&err, Error::Geometry(m) if m.contains("0.3")), "{err}");
    }

    #[test]
    fn resolution_must_be_at_least_two() {
        assert!(build_mesh(&DeviceSpec::uniform_1d(1.0), &[1]).is_err());
    }

    #[test]
    fn validation_flags_missing_contact_and_capacity() {
        let report = validate_device(&DeviceSpec::uniform_1d(1.0));
        assert!(report.contains("coercivity"));
        assert!(report.to_string().contains("no Dirichlet contact and zero capacity"));
    }

    #[test]
    fn validation_flags_zero_mobility() {
        let mut spec = two_layer_1d();
        spec.layers[1].mobility.electrons = vec![0.0];
        let report = validate_device(&spec);
        assert!(report.contains("ellipticity-low"));
        assert!(report.to_string().contains("ellipticity lower bound"));
    }

    #[test]
    fn validation_accepts_well_formed_device() {
        assert!(validate_device(&two_layer_1d()).is_ok());
    }

    #[test]
    fn validation_flags_overlap_and_misplaced_interface() {
        let mut spec = two_layer_1d();
        spec.layers[1].bounds = vec![[0.4, 1.0]];
        spec.interfaces[0].position = 0.75;
        let report = validate_device(&spec);
        assert!(report.contains("layer-overlap"));
        assert!(report.contains("interface-off-layer"));
    }

    #[test]
    fn validation_flags_negative_capacity() {
        let mut spec = two_layer_1d();
        spec.boundary.robin.push(RobinSegment {
            side: Side::XMax,
            range: None,
            capacity: -1.0,
            load: Schedule::default(),
        });
        assert!(validate_device(&spec)
            .to_string()
            .contains("capacity must be nonnegative"));
    }

    #[test]
    fn schedule_interpolates_and_clamps() {
        let s = Schedule::Table {
            times: vec![0.0, 1.0, 3.0],
            values: vec![0.0, 2.0, 0.0],
        };
        assert_eq!(s.at(-1.0), 0.0);
        assert_eq!(s.at(0.5), 1.0);
        assert_eq!(s.at(2.0), 1.0);
        assert_eq!(s.at(9.0), 0.0);
    }

    #[test]
    fn boundary_tags_partition_faces() {
        let mut spec = two_layer_1d();
        spec.boundary.robin.push(RobinSegment {
            side: Side::XMax,
            range: None,
            capacity: 1.0,
            load: Schedule::default(),
        });
        let mesh = build_mesh(&spec, &[8]).unwrap();
        assert_eq!(mesh.contact_faces, vec![vec![0]]);
        assert_eq!(mesh.robin_faces, vec![vec![8]]);
    }
}
