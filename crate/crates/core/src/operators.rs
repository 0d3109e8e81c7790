//! Finite-volume operators on the cell-centered mesh.
//!
//! All equations are cell-integrated: row `i` of an operator is the net
//! outward flux of cell `i`, and loads carry volume or area factors.
//! Carrier fluxes are *particle* flows; the current density of the
//! continuity equations is `j_k = −(particle flux)`.

use crate::device::{BoundaryTag, Device, FaceKind, Mesh};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, Factorization};
use crate::statistics::{Carrier, StatisticsModel, StatisticsPair};

/// Default relative residual demanded from linear solves.
pub const LINEAR_RTOL: f64 = 1e-12;

/// `B(x) = x / (eˣ − 1)`.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // 1 − x/2 + x²/12 − x⁴/720
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 * (1.0 - x2 / 60.0)
    } else if x > 0.0 {
        x * (-x).exp() / -(-x).exp_m1()
    } else {
        x / x.exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FluxScheme {
    CentralDiffusion,
    ScharfetterGummel,
    /// Drift argument rescaled by the face-averaged `η = F/F′`.
    ScharfetterGummelEnhanced(StatisticsModel),
}

impl FluxScheme {
    /// Face average of `η` consistent with zero flux at constant quasi-Fermi
    /// level: `(s_R − s_L) / (ln F(s_R) − ln F(s_L))`.
    pub fn face_eta(&self, s_l: f64, s_r: f64) -> Result<f64> {
        let model = match self {
            FluxScheme::ScharfetterGummelEnhanced(m) if !m.is_boltzmann() => m,
            _ => return Ok(1.0),
        };
        let ds = s_r - s_l;
        if ds.abs() < 1e-6 * (1.0 + s_l.abs()) {
            return model.eval_eta(0.5 * (s_l + s_r));
        }
        let dl = model.eval(s_r)?.ln() - model.eval(s_l)?.ln();
        Ok(ds / dl)
    }

    /// Weights `(c_L, c_R)` with particle flow `L → R` equal to
    /// `c_L u_L − c_R u_R`, for unit mobility and unit `area/distance`.
    fn weights(&self, s_l: f64, s_r: f64, dpsi: f64) -> Result<(f64, f64)> {
        Ok(match self {
            FluxScheme::CentralDiffusion => (1.0 + 0.5 * dpsi, 1.0 - 0.5 * dpsi),
            FluxScheme::ScharfetterGummel => (bernoulli(-dpsi), bernoulli(dpsi)),
            FluxScheme::ScharfetterGummelEnhanced(_) => {
                let eta = self.face_eta(s_l, s_r)?;
                (eta * bernoulli(-dpsi / eta), eta * bernoulli(dpsi / eta))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub area: f64,
    pub distance: f64,
}

/// Two-point particle flow from `L` to `R` (density · velocity · area).
///
/// `dpsi = ψ_L − ψ_R` is the drop of the drift potential across the face:
/// `ψ = φ` for electrons and `ψ = −φ` for holes, so that the quasi-Fermi
/// level is `Φ = s + ψ`.
#[allow(clippy::too_many_arguments)]
pub fn sg_flux(
    scheme: &FluxScheme,
    u_l: f64,
    u_r: f64,
    s_l: f64,
    s_r: f64,
    dpsi: f64,
    mobility: f64,
    geometry: FaceGeometry,
) -> Result<f64> {
    if !(u_l > 0.0 && u_r > 0.0) {
        return Err(Error::Domain(format!(
            "flux needs positive densities, got {u_l} and {u_r}"
        )));
    }
    let (cl, cr) = scheme.weights(s_l, s_r, dpsi)?;
    Ok(mobility * geometry.area / geometry.distance * (cl * u_l - cr * u_r))
}

/// Which region tensor an elliptic assembly uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Permittivity,
    Mobility(Carrier),
    Unit,
}

fn tensor_entry(device: &Device, cell: usize, coef: Coefficient, axis: usize) -> f64 {
    let region = device.region(cell);
    match coef {
        Coefficient::Permittivity => region.permittivity[axis],
        Coefficient::Mobility(Carrier::Electrons) => region.mobility.electrons[axis],
        Coefficient::Mobility(Carrier::Holes) => region.mobility.holes[axis],
        Coefficient::Unit => 1.0,
    }
}

/// Harmonic face transmissibility `area / Σ (half distance / κ)`; boundary
/// faces use the one-sided distance to the face.
pub fn face_transmissibility(device: &Device, face: usize, coef: Coefficient, rho: Option<&[f64]>) -> f64 {
    let f = &device.mesh.faces[face];
    let k = |c: usize| tensor_entry(device, c, coef, f.axis) * rho.map_or(1.0, |r| r[c]);
    match f.kind {
        FaceKind::Interior {
            left, right, distance, ..
        } => {
            let (kl, kr) = (k(left), k(right));
            if kl == 0.0 || kr == 0.0 {
                0.0
            } else {
                f.area / (0.5 * distance / kl + 0.5 * distance / kr)
            }
        }
        FaceKind::Boundary { cell, distance, .. } => f.area * k(cell) / distance,
    }
}

/// Record of the boundary closure applied during assembly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryClosure {
    /// `(face, ghost coefficient)` added to the diagonal of Dirichlet cells.
    pub dirichlet: Vec<(usize, f64)>,
    /// `(face, capacity · area)` added to the diagonal of Robin cells.
    pub robin: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub matrix: CsrMatrix,
    pub closure: BoundaryClosure,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    pub fn factor(&self) -> Result<Factorization> {
        Factorization::new(&self.matrix, LINEAR_RTOL)
    }

    /// Same operator with `d` added to the diagonal.
    pub fn shifted(&self, d: &[f64]) -> Self {
        Self {
            matrix: self.matrix.add_diagonal(d),
            closure: self.closure.clone(),
        }
    }
}

/// `‖Ax − b‖₂ ≤ 1e−12 ‖b‖₂`, or a [`Error::LinearSolver`] with the residual.
pub fn solve_linear(op: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    op.factor()?.solve(b)
}

fn assemble_diffusion(
    device: &Device,
    coef: Coefficient,
    rho: Option<&[f64]>,
    with_robin: bool,
) -> Result<SparseOperator> {
    let mesh = &device.mesh;
    let n = mesh.num_cells();
    let mut triplets = Vec::with_capacity(5 * n);
    let mut closure = BoundaryClosure::default();
    for (fi, face) in mesh.faces.iter().enumerate() {
        match face.kind {
            FaceKind::Interior { left, right, .. } => {
                let t = face_transmissibility(device, fi, coef, rho);
                triplets.extend([(left, left, t), (right, right, t), (left, right, -t), (right, left, -t)]);
            }
            FaceKind::Boundary { cell, tag, .. } => match tag {
                BoundaryTag::Dirichlet(_) => {
                    let t = face_transmissibility(device, fi, coef, rho);
                    triplets.push((cell, cell, t));
                    closure.dirichlet.push((fi, t));
                }
                BoundaryTag::Robin(seg) if with_robin => {
                    let m = device.spec.boundary.robin[seg].capacity * face.area;
                    triplets.push((cell, cell, m));
                    closure.robin.push((fi, m));
                }
                _ => {}
            },
        }
    }
    let matrix = CsrMatrix::from_triplets(n, &triplets)?;
    if let Some(i) = (0..n).find(|&i| !(matrix.get(i, i) > 0.0)) {
        return Err(Error::Assembly(format!(
            "operator has a nonpositive diagonal in cell {i}; the device is not coercive"
        )));
    }
    Ok(SparseOperator { matrix, closure })
}

/// Robin–Poisson operator `−div(ε∇·)` with ghost-cell Dirichlet closure and
/// Robin masses `ε_Γ · area`.
pub fn assemble_poisson(device: &Device) -> Result<SparseOperator> {
    let op = assemble_diffusion(device, Coefficient::Permittivity, None, true)?;
    if op.closure.dirichlet.is_empty() && op.closure.robin.iter().all(|&(_, m)| m <= 0.0) {
        return Err(Error::Assembly(
            "no Dirichlet contact and zero capacity: the Poisson operator is singular".into(),
        ));
    }
    Ok(op)
}

/// `−div(ρ κ ∇·)` with homogeneous Dirichlet data on the contacts and no
/// Robin masses.
pub fn assemble_elliptic(device: &Device, rho: &[f64], coef: Coefficient) -> Result<SparseOperator> {
    if rho.len() != device.mesh.num_cells() {
        return Err(Error::Index(format!(
            "weight field of length {} on {} cells",
            rho.len(),
            device.mesh.num_cells()
        )));
    }
    if let Some((i, w)) = rho.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Assembly(format!("weight {w} in cell {i} is not positive")));
    }
    let mut t = Vec::new();
    let n = device.mesh.num_cells();
    for (fi, face) in device.mesh.faces.iter().enumerate() {
        match face.kind {
            FaceKind::Interior { left, right, .. } => {
                let c = face_transmissibility(device, fi, coef, Some(rho));
                t.extend([(left, left, c), (right, right, c), (left, right, -c), (right, left, -c)]);
            }
            FaceKind::Boundary {
                cell,
                tag: BoundaryTag::Dirichlet(_),
                ..
            } => t.push((cell, cell, face_transmissibility(device, fi, coef, Some(rho)))),
            _ => {}
        }
    }
    // Pure Neumann problems keep a singular matrix; callers handle them.
    let matrix = CsrMatrix::from_triplets(n, &t)?;
    let closure = BoundaryClosure {
        dirichlet: t_dirichlet(device, coef, rho),
        robin: Vec::new(),
    };
    Ok(SparseOperator { matrix, closure })
}

fn t_dirichlet(device: &Device, coef: Coefficient, rho: &[f64]) -> Vec<(usize, f64)> {
    device
        .mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            matches!(
                f.kind,
                FaceKind::Boundary {
                    tag: BoundaryTag::Dirichlet(_),
                    ..
                }
            )
        })
        .map(|(fi, _)| (fi, face_transmissibility(device, fi, coef, Some(rho))))
        .collect()
}

/// Contact data on one Dirichlet face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactValue {
    pub phi: f64,
    pub quasi_fermi: [f64; 2],
}

impl ContactValue {
    pub fn chemical(&self, carrier: Carrier) -> f64 {
        carrier.chemical_potential(self.quasi_fermi[carrier.index()], self.phi)
    }
}

/// Dirichlet values per face (`None` off the contacts) at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletData {
    pub faces: Vec<Option<ContactValue>>,
}

impl DirichletData {
    pub fn get(&self, face: usize) -> Option<ContactValue> {
        self.faces[face]
    }
}

/// Potential of local charge neutrality `d + F₁(Φ₁ − φ) − F₂(Φ₂ + φ) = 0`.
pub fn neutral_potential(stats: &StatisticsPair, doping: f64, quasi_fermi: [f64; 2]) -> Result<f64> {
    let g = |phi: f64| -> Result<(f64, f64)> {
        let (f1, d1) = stats.electrons.eval_with_derivative(quasi_fermi[0] - phi)?;
        let (f2, d2) = stats.holes.eval_with_derivative(quasi_fermi[1] + phi)?;
        Ok((doping + f1 - f2, -d1 - d2))
    };
    // g is strictly decreasing; bracket geometrically around the midpoint.
    let mid = 0.5 * (quasi_fermi[0] - quasi_fermi[1]);
    let mut step = 1.0;
    let (mut lo, mut hi) = (mid - step, mid + step);
    while g(lo)?.0 < 0.0 {
        step *= 2.0;
        lo = mid - step;
    }
    while g(hi)?.0 > 0.0 {
        step *= 2.0;
        hi = mid + step;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (v, dv) = g(x)?;
        if v == 0.0 {
            return Ok(x);
        }
        if v > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - v / dv;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Evaluates every contact at time `t`. Ohmic contacts (`bias = V`) get
/// `Φ₁ = −V`, `Φ₂ = V` and the neutral potential for the doping of the
/// adjacent cell.
pub fn dirichlet_data(device: &Device, stats: &StatisticsPair, t: f64) -> Result<DirichletData> {
    let mesh = &device.mesh;
    let mut faces = vec![None; mesh.faces.len()];
    for (ci, contact) in device.spec.boundary.contacts.iter().enumerate() {
        for &fi in &mesh.contact_faces[ci] {
            let cell = mesh.faces[fi].cells().0;
            let value = match (&contact.bias, &contact.phi, &contact.quasi_fermi) {
                (Some(bias), _, _) => {
                    let v = bias.at(t);
                    let qf = [-v, v];
                    ContactValue {
                        phi: neutral_potential(stats, mesh.doping[cell], qf)?,
                        quasi_fermi: qf,
                    }
                }
                (None, Some(phi), Some(qf)) => ContactValue {
                    phi: phi.at(t),
                    quasi_fermi: [qf[0].at(t), qf[1].at(t)],
                },
                _ => {
                    return Err(Error::InvalidDevice(format!(
                        "contact `{}` has incomplete data",
                        contact.name
                    )))
                }
            };
            faces[fi] = Some(value);
        }
    }
    Ok(DirichletData { faces })
}

/// Distributes per-area rates on `faces` to cells: a boundary face deposits
/// `rate · area` in its cell, an interface face half of it in each neighbor.
pub fn apply_surface_load(mesh: &Mesh, faces: &[usize], rates: &[f64]) -> Result<Vec<f64>> {
    if faces.len() != rates.len() {
        return Err(Error::Index(format!("{} faces but {} rates", faces.len(), rates.len())));
    }
    let mut load = vec![0.0; mesh.num_cells()];
    for (&fi, &rate) in faces.iter().zip(rates) {
        let face = mesh
            .faces
            .get(fi)
            .ok_or_else(|| Error::Index(format!("face {fi} does not exist")))?;
        match face.kind {
            FaceKind::Boundary { cell, .. } => load[cell] += rate * face.area,
            FaceKind::Interior {
                left, right, interface, ..
            } => {
                let sheet = mesh.sheet_faces.iter().any(|s| s.contains(&fi));
                if interface.is_none() && !sheet {
                    return Err(Error::Index(format!("interior face {fi} is not on an interface")));
                }
                let half = 0.5 * rate * face.area;
                load[left] += half;
                load[right] += half;
            }
        }
    }
    Ok(load)
}

/// Right-hand side of the linear Poisson problem: cell-integrated bulk and
/// sheet doping, Robin loads and the Dirichlet ghost terms.
pub fn poisson_load(device: &Device, op: &SparseOperator, dirichlet: &DirichletData, t: f64) -> Result<Vec<f64>> {
    let mesh = &device.mesh;
    let mut b: Vec<f64> = mesh.cells.iter().zip(&mesh.doping).map(|(c, d)| c.volume * d).collect();
    for (k, sheet) in device.spec.doping.sheets.iter().enumerate() {
        let faces = &mesh.sheet_faces[k];
        let load = apply_surface_load(mesh, faces, &vec![sheet.density; faces.len()])?;
        b.iter_mut().zip(&load).for_each(|(b, l)| *b += l);
    }
    for &(fi, coef) in &op.closure.dirichlet {
        let value = dirichlet
            .get(fi)
            .ok_or_else(|| Error::Assembly(format!("no Dirichlet value on face {fi}")))?;
        b[mesh.faces[fi].cells().0] += coef * value.phi;
    }
    for (seg, faces) in mesh.robin_faces.iter().enumerate() {
        let load = device.spec.boundary.robin[seg].load.at(t);
        for &fi in faces {
            b[mesh.faces[fi].cells().0] += load * mesh.faces[fi].area;
        }
    }
    Ok(b)
}

/// Cellwise fields entering the carrier flux coefficients.
#[derive(Debug, Clone, Copy)]
pub struct FluxFields<'a> {
    pub phi: &'a [f64],
    /// Chemical potential `χ_k` of the carrier.
    pub chemical: &'a [f64],
}

/// Per-face flux weights: particle flow in `+axis` direction is
/// `lo · u_lo − hi · u_hi`, where on a boundary face the missing side is the
/// contact density. Faces without transport have zero weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaceWeights {
    pub lo: f64,
    pub hi: f64,
    /// Contact density on Dirichlet faces.
    pub ghost: f64,
}

pub fn carrier_face_weights(
    device: &Device,
    carrier: Carrier,
    model: &StatisticsModel,
    scheme: &FluxScheme,
    fields: FluxFields<'_>,
    dirichlet: &DirichletData,
) -> Result<Vec<FaceWeights>> {
    let mesh = &device.mesh;
    let psi_sign = -carrier.potential_sign();
    let mut out = vec![FaceWeights::default(); mesh.faces.len()];
    for (fi, face) in mesh.faces.iter().enumerate() {
        let mobility = face_transmissibility(device, fi, Coefficient::Mobility(carrier), None);
        if mobility == 0.0 {
            continue;
        }
        match face.kind {
            FaceKind::Interior { left, right, .. } => {
                let dpsi = psi_sign * (fields.phi[left] - fields.phi[right]);
                let (cl, cr) = scheme.weights(fields.chemical[left], fields.chemical[right], dpsi)?;
                out[fi] = FaceWeights {
                    lo: mobility * cl,
                    hi: mobility * cr,
                    ghost: 0.0,
                };
            }
            FaceKind::Boundary { cell, side, .. } => {
                let Some(value) = dirichlet.get(fi) else { continue };
                let s_d = value.chemical(carrier);
                let ghost = model.eval(s_d)?;
                let (s_c, phi_c) = (fields.chemical[cell], fields.phi[cell]);
                out[fi] = if side.is_max() {
                    let (cl, cr) = scheme.weights(s_c, s_d, psi_sign * (phi_c - value.phi))?;
                    FaceWeights {
                        lo: mobility * cl,
                        hi: mobility * cr,
                        ghost,
                    }
                } else {
                    let (cl, cr) = scheme.weights(s_d, s_c, psi_sign * (value.phi - phi_c))?;
                    FaceWeights {
                        lo: mobility * cl,
                        hi: mobility * cr,
                        ghost,
                    }
                };
            }
        }
    }
    Ok(out)
}

/// Particle flow across every face in `+axis` direction for densities `u`.
pub fn face_flows(mesh: &Mesh, weights: &[FaceWeights], u: &[f64]) -> Vec<f64> {
    mesh.faces
        .iter()
        .zip(weights)
        .map(|(face, w)| match face.kind {
            FaceKind::Interior { left, right, .. } => w.lo * u[left] - w.hi * u[right],
            FaceKind::Boundary { cell, side, .. } => {
                if side.is_max() {
                    w.lo * u[cell] - w.hi * w.ghost
                } else {
                    w.lo * w.ghost - w.hi * u[cell]
                }
            }
        })
        .collect()
}

/// Discrete `−div j_k`, acting on densities, plus the contact load.
#[derive(Debug, Clone)]
pub struct ContinuitySystem {
    pub operator: SparseOperator,
    pub load: Vec<f64>,
    pub weights: Vec<FaceWeights>,
}

impl ContinuitySystem {
    /// Net outward particle flow of every cell.
    pub fn divergence(&self, u: &[f64]) -> Vec<f64> {
        self.operator
            .apply(u)
            .iter()
            .zip(&self.load)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Assembles the cell-integrated `−div j_k` with coefficients frozen at
/// `fields`: row `i` applied to `u` minus `load[i]` is the net outward
/// particle flow of cell `i`.
pub fn assemble_continuity(
    device: &Device,
    fields: FluxFields<'_>,
    stats: &StatisticsPair,
    scheme: &FluxScheme,
    carrier: Carrier,
    dirichlet: &DirichletData,
) -> Result<ContinuitySystem> {
    let mesh = &device.mesh;
    let n = mesh.num_cells();
    let weights = carrier_face_weights(device, carrier, stats.get(carrier), scheme, fields, dirichlet)?;
    let mut t = Vec::with_capacity(5 * n);
    let mut load = vec![0.0; n];
    let mut closure = BoundaryClosure::default();
    for (fi, (face, w)) in mesh.faces.iter().zip(&weights).enumerate() {
        match face.kind {
            FaceKind::Interior { left, right, .. } => {
                t.extend([
                    (left, left, w.lo),
                    (left, right, -w.hi),
                    (right, left, -w.lo),
                    (right, right, w.hi),
                ]);
            }
            FaceKind::Boundary { cell, side, .. } => {
                if w.lo == 0.0 && w.hi == 0.0 {
                    continue;
                }
                // Outward flow: +flow on the max side, −flow on the min side.
                let (diag, ghost) = if side.is_max() { (w.lo, w.hi) } else { (w.hi, w.lo) };
                t.push((cell, cell, diag));
                load[cell] += ghost * w.ghost;
                closure.dirichlet.push((fi, diag));
            }
        }
    }
    t.extend((0..n).map(|i| (i, i, 0.0)));
    Ok(ContinuitySystem {
        operator: SparseOperator {
            matrix: CsrMatrix::from_triplets(n, &t)?,
            closure,
        },
        load,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_values() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1.0) - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((bernoulli(1.0) - 0.581_976_706_869_326_4).abs() < 1e-15);
        let x = 3.0f64;
        assert!((bernoulli(-x) - bernoulli(x) * x.exp()).abs() < 1e-14);
        assert!((bernoulli(-x) - x / (1.0 - (-x).exp())).abs() < 1e-14);
        assert_eq!(bernoulli(800.0), 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
        // Series and closed form agree at the switch point.
        let x = 0.99e-4f64;
        assert!((bernoulli(x) - x / x.exp_m1()).abs() < 1e-12);
        assert!((bernoulli(x) - bernoulli(1.01e-4)).abs() < 1e-5);
    }

    #[test]
    fn sg_flux_examples() {
        let g = FaceGeometry {
            area: 1.0,
            distance: 1.0,
        };
        let sg = FluxScheme::ScharfetterGummel;
        assert_eq!(sg_flux(&sg, 1.5, 1.5, 0.0, 0.0, 0.0, 1.0, g).unwrap(), 0.0);
        assert!((sg_flux(&sg, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0, g).unwrap() - 1.0).abs() < 1e-15);
        let dpsi: f64 = 0.7;
        let ur = 1.3;
        let ul = (-dpsi).exp() * ur;
        assert!(sg_flux(&sg, ul, ur, 0.0, 0.0, dpsi, 1.0, g).unwrap().abs() < 1e-14);
        assert!(matches!(
            sg_flux(&sg, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, g),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn enhanced_boltzmann_is_plain() {
        let enh = FluxScheme::ScharfetterGummelEnhanced(StatisticsModel::boltzmann());
        let sg = FluxScheme::ScharfetterGummel;
        for &(sl, sr, d) in &[(0.1, 0.3, -2.0), (-4.0, 1.0, 5.0), (2.0, 2.0, 0.0)] {
            assert_eq!(enh.weights(sl, sr, d).unwrap(), sg.weights(sl, sr, d).unwrap());
        }
    }

    #[test]
    fn enhanced_zero_flux_at_constant_quasi_fermi() {
        let fd = StatisticsModel::fermi_dirac_half();
        let enh = FluxScheme::ScharfetterGummelEnhanced(fd);
        let g = FaceGeometry {
            area: 1.0,
            distance: 0.5,
        };
        for &(sl, sr) in &[(3.0, 5.0), (-2.0, 8.0), (10.0, 10.0 + 1e-9)] {
            // Φ = s + ψ constant: dpsi = ψ_L − ψ_R = s_R − s_L.
            let f = sg_flux(
                &enh,
                fd.eval(sl).unwrap(),
                fd.eval(sr).unwrap(),
                sl,
                sr,
                sr - sl,
                1.0,
                g,
            )
            .unwrap();
            assert!(f.abs() < 1e-12 * fd.eval(sr).unwrap(), "{sl} {sr}: {f}");
        }
    }

    #[test]
    fn central_diffusion_is_linearized_sg() {
        let c = FluxScheme::CentralDiffusion;
        let (l, r) = c.weights(0.0, 0.0, 0.0).unwrap();
        assert_eq!((l, r), (1.0, 1.0));
    }
}
