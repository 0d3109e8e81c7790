//! Implicit-Euler time stepping of the carrier equations with Gummel
//! decoupling, conservation bookkeeping and blow-up detection.
//!
//! Each step iterates a nonlinear Poisson solve for the potential at frozen
//! quasi-Fermi levels and two linear backward-Euler continuity solves for
//! the densities at frozen potential until the quasi-Fermi levels settle.
//! Recombination enters semi-implicitly: the loss part proportional to the
//! unknown density is implicit, the rest is evaluated at the current
//! iterate, and field/current-dependent generation is lagged one sweep.

use serde::{Deserialize, Serialize};

use crate::device::{BoundaryTag, Device, FaceKind};
use crate::error::{Error, Result};
use crate::operators::{
    assemble_continuity, assemble_elliptic, assemble_poisson, dirichlet_data, face_flows, poisson_load, Coefficient,
    ContinuitySystem, DirichletData, FaceWeights, FluxFields, FluxScheme, SparseOperator,
};
use crate::poisson::{equilibrium_state, solve_operator_s_from, NonlinearPoissonProblem};
use crate::recombination::{BulkInputs, BulkRecombination, Linearized, SurfaceRecombination};
use crate::sparse::Factorization;
use crate::statistics::{Carrier, StatisticsPair};

#[derive(Debug, Clone, PartialEq)]
pub struct CarrierState {
    pub t: f64,
    pub u: [Vec<f64>; 2],
    pub phi: Vec<f64>,
    pub quasi_fermi: [Vec<f64>; 2],
    pub chemical: [Vec<f64>; 2],
}

impl CarrierState {
    /// State with densities `u_k = F_k(Φ_k ± φ)`.
    pub fn from_quasi_fermi(t: f64, phi: Vec<f64>, quasi_fermi: [Vec<f64>; 2], stats: &StatisticsPair) -> Result<Self> {
        let mut chemical = [Vec::new(), Vec::new()];
        let mut u = [Vec::new(), Vec::new()];
        for c in Carrier::BOTH {
            let k = c.index();
            chemical[k] = quasi_fermi[k]
                .iter()
                .zip(&phi)
                .map(|(&q, &p)| c.chemical_potential(q, p))
                .collect();
            u[k] = chemical[k]
                .iter()
                .map(|&s| stats.get(c).eval(s))
                .collect::<Result<_>>()?;
        }
        Ok(Self {
            t,
            u,
            phi,
            quasi_fermi,
            chemical,
        })
    }

    /// State with quasi-Fermi levels recovered from positive densities.
    pub fn from_densities(t: f64, phi: Vec<f64>, u: [Vec<f64>; 2], stats: &StatisticsPair) -> Result<Self> {
        let mut chemical = [Vec::new(), Vec::new()];
        let mut quasi_fermi = [Vec::new(), Vec::new()];
        for c in Carrier::BOTH {
            let k = c.index();
            chemical[k] = u[k].iter().map(|&v| stats.get(c).invert(v)).collect::<Result<_>>()?;
            quasi_fermi[k] = chemical[k]
                .iter()
                .zip(&phi)
                .map(|(&s, &p)| c.quasi_fermi(s, p))
                .collect();
        }
        Ok(Self {
            t,
            u,
            phi,
            quasi_fermi,
            chemical,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.phi.len()
    }

    /// Largest violation of `u = F(χ)` (relative) and of `χ = Φ ± φ`
    /// (absolute), and whether all densities are positive.
    pub fn consistency(&self, stats: &StatisticsPair) -> Result<(f64, f64, bool)> {
        let mut density = 0.0f64;
        let mut relation = 0.0f64;
        let mut positive = true;
        for c in Carrier::BOTH {
            let k = c.index();
            for i in 0..self.num_cells() {
                let f = stats.get(c).eval(self.chemical[k][i])?;
                density = density.max((f - self.u[k][i]).abs() / f);
                let chi = c.chemical_potential(self.quasi_fermi[k][i], self.phi[i]);
                relation = relation.max((chi - self.chemical[k][i]).abs());
                positive &= self.u[k][i] > 0.0;
            }
        }
        Ok((density, relation, positive))
    }
}

/// Discretization of the carrier fluxes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    CentralDiffusion,
    ScharfetterGummel,
    /// Scharfetter–Gummel with the degeneracy correction; identical to the
    /// plain scheme under Boltzmann statistics.
    #[default]
    ScharfetterGummelEnhanced,
}

/// Physical models of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub stats: StatisticsPair,
    pub bulk: Vec<BulkRecombination>,
    pub scheme: SchemeKind,
}

impl Models {
    pub fn new(stats: StatisticsPair) -> Self {
        Self {
            stats,
            bulk: Vec::new(),
            scheme: SchemeKind::default(),
        }
    }

    pub fn flux_scheme(&self, carrier: Carrier) -> FluxScheme {
        match self.scheme {
            SchemeKind::CentralDiffusion => FluxScheme::CentralDiffusion,
            SchemeKind::ScharfetterGummel => FluxScheme::ScharfetterGummel,
            SchemeKind::ScharfetterGummelEnhanced => FluxScheme::ScharfetterGummelEnhanced(*self.stats.get(carrier)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeStepperConfig {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub gummel_tol: f64,
    pub gummel_max_iter: usize,
    /// Admissible size of the blow-up proxy norm.
    pub blowup_threshold: f64,
    /// Disable to march with the fixed step `dt`.
    pub adaptive: bool,
    pub max_steps: usize,
}

impl Default for TimeStepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            dt_min: 1e-10,
            dt_max: 1.0,
            t_end: 1.0,
            gummel_tol: 1e-10,
            gummel_max_iter: 100,
            blowup_threshold: 1e3,
            adaptive: true,
            max_steps: 100_000,
        }
    }
}

impl TimeStepperConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt
            && self.dt <= self.dt_max
            && self.t_end >= 0.0
            && self.gummel_tol > 0.0
            && self.gummel_max_iter > 0
            && self.blowup_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDevice(format!(
                "stepper needs 0 < dt_min ≤ dt ≤ dt_max and positive tolerances, got {self:?}"
            )))
        }
    }
}

/// Inhomogeneous data at one time: potential lift `φ_d`, quasi-Fermi lift
/// `Φ^d` and the contact values they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub phi_d: Vec<f64>,
    pub quasi_fermi_d: [Vec<f64>; 2],
    pub dirichlet: DirichletData,
}

/// Cached operators of one device.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub device: Device,
    pub models: Models,
    pub config: TimeStepperConfig,
    poisson: SparseOperator,
    poisson_factor: Factorization,
    problem: NonlinearPoissonProblem,
}

/// What the final continuity solve of a step actually applied, per carrier.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CarrierBalance {
    /// `Σ V (u_new − u_old) / dt`.
    pub storage: f64,
    /// Net particle outflow through the contacts.
    pub outflow: f64,
    pub bulk: f64,
    pub surface: f64,
    pub interface: f64,
    /// Rate per interface face at the new state, `(face, rate)`.
    pub interface_rates: Vec<(usize, f64)>,
    /// Gross throughput used to scale the residual.
    pub scale: f64,
}

impl CarrierBalance {
    pub fn residual(&self) -> f64 {
        (self.storage + self.outflow - self.bulk - self.surface - self.interface).abs()
    }

    pub fn relative_residual(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual()
        } else {
            self.residual() / self.scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub gummel_iterations: usize,
    pub poisson_iterations: usize,
    pub balance: [CarrierBalance; 2],
    /// Electric current into the device through each contact.
    pub contact_currents: Vec<f64>,
    /// Particle flow per face in `+axis` direction.
    pub flows: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub residual: [f64; 2],
    pub relative: [f64; 2],
}

/// Per-carrier conservation residual
/// `|Σ V Δu/dt + outflow − bulk − surface − interface|` of an accepted step.
pub fn balance_report(record: &StepRecord) -> BalanceReport {
    BalanceReport {
        residual: [record.balance[0].residual(), record.balance[1].residual()],
        relative: [
            record.balance[0].relative_residual(),
            record.balance[1].relative_residual(),
        ],
    }
}

/// Face currents `j_k · e_axis · area` and cell-centered current densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Currents {
    pub faces: [Vec<f64>; 2],
    pub cells: [Vec<[f64; 2]>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowUpReport {
    pub detected: bool,
    pub t_star: Option<f64>,
    pub reason: Option<String>,
    /// `(t, proxy norm)` samples of the accepted states.
    pub history: Vec<(f64, f64)>,
}

/// Flags blow-up when the proxy norm exceeds the threshold while strictly
/// increasing over the last three samples.
pub fn detect_blowup(history: &[(f64, f64)], config: &TimeStepperConfig) -> BlowUpReport {
    let mut report = BlowUpReport {
        detected: false,
        t_star: None,
        reason: None,
        history: history.to_vec(),
    };
    for end in 3..=history.len() {
        let w = &history[end - 3..end];
        let increasing = w[0].1 < w[1].1 && w[1].1 < w[2].1;
        if increasing && w[2].1 > config.blowup_threshold {
            report.detected = true;
            report.t_star = Some(w[2].0);
            report.reason = Some(format!(
                "norm {:.6e} exceeds threshold {:.6e}",
                w[2].1, config.blowup_threshold
            ));
            report.history.truncate(end);
            break;
        }
    }
    report
}

fn step_size_collapse(history: &[(f64, f64)], t: f64) -> BlowUpReport {
    BlowUpReport {
        detected: true,
        t_star: Some(t),
        reason: Some("step-size collapse".into()),
        history: history.to_vec(),
    }
}

/// Initial quasi-Fermi levels of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Equilibrium,
    QuasiFermi([Vec<f64>; 2]),
    Densities([Vec<f64>; 2]),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_state: CarrierState,
    pub records: Vec<StepRecord>,
    pub blowup: BlowUpReport,
    pub rejected_steps: usize,
    /// Failure that ended the run early, if any.
    pub error: Option<Error>,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Cell-centered gradient of a cell field with the given face values on
/// Dirichlet faces (`None`: zero normal derivative).
fn cell_gradients(device: &Device, field: &[f64], boundary: impl Fn(usize) -> Option<f64>) -> Vec<[f64; 2]> {
    let mesh = &device.mesh;
    let face_grad: Vec<f64> = mesh
        .faces
        .iter()
        .enumerate()
        .map(|(fi, f)| match f.kind {
            FaceKind::Interior {
                left, right, distance, ..
            } => (field[right] - field[left]) / distance,
            FaceKind::Boundary {
                cell, side, distance, ..
            } => boundary(fi).map_or(0.0, |v| side.outward_sign() * (v - field[cell]) / distance),
        })
        .collect();
    (0..mesh.num_cells())
        .map(|c| {
            let mut g = [0.0; 2];
            for (a, ga) in g.iter_mut().enumerate().take(mesh.dimension) {
                let [lo, hi] = mesh.cell_faces[c][a];
                *ga = 0.5 * (face_grad[lo] + face_grad[hi]);
            }
            g
        })
        .collect()
}

fn cell_currents(device: &Device, face_currents: &[f64]) -> Vec<[f64; 2]> {
    let mesh = &device.mesh;
    (0..mesh.num_cells())
        .map(|c| {
            let mut j = [0.0; 2];
            for (a, ja) in j.iter_mut().enumerate().take(mesh.dimension) {
                let [lo, hi] = mesh.cell_faces[c][a];
                *ja = 0.5 * (face_currents[lo] / mesh.faces[lo].area + face_currents[hi] / mesh.faces[hi].area);
            }
            j
        })
        .collect()
}

/// Blow-up proxy: max over cells and carriers of `|∇Φ_k|` plus `‖Φ_k‖∞`.
pub fn proxy_norm(device: &Device, state: &CarrierState, dirichlet: &DirichletData) -> f64 {
    let mut grad = 0.0f64;
    let mut sup = 0.0f64;
    for c in Carrier::BOTH {
        let k = c.index();
        let g = cell_gradients(device, &state.quasi_fermi[k], |fi| {
            dirichlet.get(fi).map(|v| v.quasi_fermi[k])
        });
        for v in &g {
            grad = grad.max((v[0] * v[0] + v[1] * v[1]).sqrt());
        }
        sup = sup.max(state.quasi_fermi[k].iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    grad + sup
}

struct Sources {
    /// Implicit loss coefficients (cell-integrated diagonal).
    loss: Vec<f64>,
    /// Explicit gains (cell-integrated).
    gain: Vec<f64>,
    bulk: Vec<Linearized>,
    surface: Vec<(usize, Linearized)>,
    interface: Vec<(usize, Linearized)>,
}

impl Simulator {
    pub fn new(device: Device, models: Models, config: TimeStepperConfig) -> Result<Self> {
        config.check()?;
        for m in &models.bulk {
            if let Some(msg) = m.check() {
                return Err(Error::InvalidDevice(msg));
            }
        }
        let poisson = assemble_poisson(&device)?;
        let poisson_factor = poisson.factor()?;
        let n = device.mesh.num_cells();
        let problem = NonlinearPoissonProblem::new(
            poisson.clone(),
            device.mesh.volumes(),
            models.stats,
            [vec![0.0; n], vec![0.0; n]],
        )?;
        Ok(Self {
            device,
            models,
            config,
            poisson,
            poisson_factor,
            problem,
        })
    }

    pub fn poisson_operator(&self) -> &SparseOperator {
        &self.poisson
    }

    pub fn dirichlet(&self, t: f64) -> Result<DirichletData> {
        dirichlet_data(&self.device, &self.models.stats, t)
    }

    /// `φ_d` from the linear Robin–Poisson problem with doping, sheets,
    /// Robin load and Dirichlet lift; `Φ^d` as `A_{μ_k}`-harmonic lift of the
    /// contact quasi-Fermi levels (zero without contacts).
    pub fn split_data(&self, t: f64) -> Result<SplitData> {
        let (phi_d, dirichlet) = self.potential_lift(t)?;
        let n = self.device.mesh.num_cells();
        let mut quasi_fermi_d = [vec![0.0; n], vec![0.0; n]];
        if self.device.has_dirichlet() {
            for c in Carrier::BOTH {
                let k = c.index();
                let op = assemble_elliptic(&self.device, &vec![1.0; n], Coefficient::Mobility(c))?;
                let mut b = vec![0.0; n];
                for &(fi, coef) in &op.closure.dirichlet {
                    let v = dirichlet.get(fi).expect("contact face").quasi_fermi[k];
                    b[self.device.mesh.faces[fi].cells().0] += coef * v;
                }
                quasi_fermi_d[k] = op.factor()?.solve(&b)?;
            }
        }
        Ok(SplitData {
            phi_d,
            quasi_fermi_d,
            dirichlet,
        })
    }

    /// `φ_d` and the contact data at time `t`.
    fn potential_lift(&self, t: f64) -> Result<(Vec<f64>, DirichletData)> {
        let dirichlet = self.dirichlet(t)?;
        let load = poisson_load(&self.device, &self.poisson, &dirichlet, t)?;
        Ok((self.poisson_factor.solve(&load)?, dirichlet))
    }

    /// Potential for given quasi-Fermi levels at time `t`.
    pub fn solve_potential(
        &self,
        phi_d: &[f64],
        quasi_fermi: &[Vec<f64>; 2],
        start: Option<&[f64]>,
    ) -> Result<(Vec<f64>, usize)> {
        let omega = [sub(&quasi_fermi[0], phi_d), add(&quasi_fermi[1], phi_d)];
        let problem = self.problem.with_omega(omega);
        let start = start.map(|phi| sub(phi, phi_d));
        let (tilde, report) = solve_operator_s_from(&problem, start.as_deref())?;
        Ok((add(phi_d, &tilde), report.iterations))
    }

    pub fn initial_state(&self, initial: &InitialCondition) -> Result<CarrierState> {
        let stats = &self.models.stats;
        match initial {
            InitialCondition::Equilibrium => {
                let eq = equilibrium_state(&self.device, stats)?;
                let n = eq.phi.len();
                CarrierState::from_quasi_fermi(0.0, eq.phi, [vec![0.0; n], vec![0.0; n]], stats)
            }
            InitialCondition::QuasiFermi(qf) => {
                let (phi_d, _) = self.potential_lift(0.0)?;
                let (phi, _) = self.solve_potential(&phi_d, qf, None)?;
                CarrierState::from_quasi_fermi(0.0, phi, qf.clone(), stats)
            }
            InitialCondition::Densities(u) => {
                // Linear Poisson with the given space charge.
                let dirichlet = self.dirichlet(0.0)?;
                let mut load = poisson_load(&self.device, &self.poisson, &dirichlet, 0.0)?;
                for (i, c) in self.device.mesh.cells.iter().enumerate() {
                    load[i] += c.volume * (u[0][i] - u[1][i]);
                }
                let phi = self.poisson_factor.solve(&load)?;
                CarrierState::from_densities(0.0, phi, u.clone(), stats)
            }
        }
    }

    /// Face and cell currents of a state.
    pub fn compute_currents(&self, state: &CarrierState, dirichlet: &DirichletData) -> Result<Currents> {
        let mut faces = [Vec::new(), Vec::new()];
        let mut cells = [Vec::new(), Vec::new()];
        for c in Carrier::BOTH {
            let k = c.index();
            let w = self.weights(c, &state.phi, &state.chemical[k], dirichlet)?;
            faces[k] = face_flows(&self.device.mesh, &w, &state.u[k])
                .iter()
                .map(|f| -f)
                .collect();
            cells[k] = cell_currents(&self.device, &faces[k]);
        }
        Ok(Currents { faces, cells })
    }

    /// Current into the device through each contact, with the convention of
    /// [`StepRecord::contact_currents`], evaluated from the state itself.
    pub fn contact_currents(&self, state: &CarrierState) -> Result<Vec<f64>> {
        let mesh = &self.device.mesh;
        let j = self.compute_currents(state, &self.dirichlet(state.t)?)?;
        Ok(mesh
            .contact_faces
            .iter()
            .map(|faces| {
                faces
                    .iter()
                    .map(|&fi| {
                        let sign = match mesh.faces[fi].kind {
                            FaceKind::Boundary { side, .. } => side.outward_sign(),
                            FaceKind::Interior { .. } => 0.0,
                        };
                        sign * (j.faces[1][fi] - j.faces[0][fi])
                    })
                    .sum()
            })
            .collect())
    }

    fn weights(
        &self,
        c: Carrier,
        phi: &[f64],
        chemical: &[f64],
        dirichlet: &DirichletData,
    ) -> Result<Vec<FaceWeights>> {
        crate::operators::carrier_face_weights(
            &self.device,
            c,
            self.models.stats.get(c),
            &self.models.flux_scheme(c),
            FluxFields { phi, chemical },
            dirichlet,
        )
    }

    fn sources(
        &self,
        c: Carrier,
        u: &[Vec<f64>; 2],
        quasi_fermi: &[Vec<f64>; 2],
        grad_phi: &[[f64; 2]],
        j_cells: &[Vec<[f64; 2]>; 2],
    ) -> Result<Sources> {
        let mesh = &self.device.mesh;
        let n = mesh.num_cells();
        let dim = mesh.dimension;
        let mut s = Sources {
            loss: vec![0.0; n],
            gain: vec![0.0; n],
            bulk: vec![Linearized::default(); n],
            surface: Vec::new(),
            interface: Vec::new(),
        };
        for i in 0..n {
            let x = BulkInputs {
                u: [u[0][i], u[1][i]],
                grad_phi: &grad_phi[i][..dim],
                j1: &j_cells[0][i][..dim],
                j2: &j_cells[1][i][..dim],
                quasi_fermi: [quasi_fermi[0][i], quasi_fermi[1][i]],
            };
            let mut l = Linearized::default();
            for m in &self.models.bulk {
                l += m.linearize(c, &x)?;
            }
            let v = mesh.cells[i].volume;
            s.loss[i] += v * l.loss;
            s.gain[i] += v * l.gain;
            s.bulk[i] = l;
        }
        for (seg, faces) in mesh.surface_faces.iter().enumerate() {
            let model = &self.device.spec.boundary.surfaces[seg].model;
            for &fi in faces {
                let cell = mesh.faces[fi].cells().0;
                let l = model.linearize(c, [u[0][cell], u[1][cell]])?;
                let a = mesh.faces[fi].area;
                s.loss[cell] += a * l.loss;
                s.gain[cell] += a * l.gain;
                s.surface.push((fi, l));
            }
        }
        for (k, faces) in mesh.interface_faces.iter().enumerate() {
            let model: &SurfaceRecombination = &self.device.spec.interfaces[k].model;
            if model.is_zero() {
                continue;
            }
            for &fi in faces {
                let (l_cell, r_cell) = mesh.faces[fi].cells();
                let r_cell = r_cell.expect("interface faces are interior");
                let trace = [0.5 * (u[0][l_cell] + u[0][r_cell]), 0.5 * (u[1][l_cell] + u[1][r_cell])];
                let l = model.linearize(c, trace)?;
                let half = 0.5 * mesh.faces[fi].area;
                for cell in [l_cell, r_cell] {
                    s.loss[cell] += half * l.loss;
                    s.gain[cell] += half * l.gain;
                }
                s.interface.push((fi, l));
            }
        }
        Ok(s)
    }

    /// One implicit-Euler step of size `dt` by Gummel iteration.
    pub fn gummel_step(&self, state: &CarrierState, dt: f64) -> Result<(CarrierState, StepRecord)> {
        // Extrapolated iterates may leave the range of the statistics.
        self.gummel_sweeps(state, dt).map_err(|e| match e {
            Error::Domain(m) => Error::StepRejected(format!("iterate left the admissible range: {m}")),
            Error::NonConvergence { .. } => Error::StepRejected(e.to_string()),
            e => e,
        })
    }

    fn gummel_sweeps(&self, state: &CarrierState, dt: f64) -> Result<(CarrierState, StepRecord)> {
        if !(dt > 0.0) {
            return Err(Error::StepRejected(format!("nonpositive step {dt}")));
        }
        let stats = &self.models.stats;
        let mesh = &self.device.mesh;
        let n = mesh.num_cells();
        let t_new = state.t + dt;
        let (phi_d, dirichlet) = self.potential_lift(t_new)?;
        let dirichlet = &dirichlet;
        let volumes = mesh.volumes();
        let current_dependent = self.models.bulk.iter().any(|m| m.is_current_dependent());

        let mut qf = state.quasi_fermi.clone();
        let mut phi = state.phi.clone();
        let mut j_cells = if current_dependent {
            self.compute_currents(state, &self.dirichlet(state.t)?)?.cells
        } else {
            [vec![[0.0; 2]; n], vec![[0.0; 2]; n]]
        };
        let mut poisson_iterations = 0;
        let mut converged_at = None;
        let mut anderson = Anderson::new(ANDERSON_DEPTH);
        let max_sweeps = self.config.gummel_max_iter;

        for sweep in 1..=max_sweeps + 1 {
            let (new_phi, its) = self
                .solve_potential(&phi_d, &qf, Some(&phi))
                .map_err(|e| Error::StepRejected(format!("potential solve failed: {e}")))?;
            phi = new_phi;
            poisson_iterations += its;

            let mut chem = [Vec::new(), Vec::new()];
            let mut u_iter = [Vec::new(), Vec::new()];
            for c in Carrier::BOTH {
                let k = c.index();
                chem[k] = qf[k]
                    .iter()
                    .zip(&phi)
                    .map(|(&q, &p)| c.chemical_potential(q, p))
                    .collect();
                u_iter[k] = chem[k].iter().map(|&s| stats.get(c).eval(s)).collect::<Result<_>>()?;
            }
            let grad_phi = cell_gradients(&self.device, &phi, |fi| dirichlet.get(fi).map(|v| v.phi));

            let mut u_new = [Vec::new(), Vec::new()];
            let mut systems = Vec::with_capacity(2);
            let mut applied = Vec::with_capacity(2);
            for c in Carrier::BOTH {
                let k = c.index();
                let system = assemble_continuity(
                    &self.device,
                    FluxFields {
                        phi: &phi,
                        chemical: &chem[k],
                    },
                    stats,
                    &self.models.flux_scheme(c),
                    c,
                    dirichlet,
                )?;
                let src = self.sources(c, &u_iter, &qf, &grad_phi, &j_cells)?;
                let diag: Vec<f64> = (0..n).map(|i| volumes[i] / dt + src.loss[i]).collect();
                let a = system.operator.shifted(&diag);
                let b: Vec<f64> = (0..n)
                    .map(|i| volumes[i] / dt * state.u[k][i] + src.gain[i] + system.load[i])
                    .collect();
                let x = a
                    .factor()
                    .and_then(|f| f.solve(&b))
                    .map_err(|e| Error::StepRejected(format!("continuity solve failed: {e}")))?;
                if let Some(i) = x.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::StepRejected(format!(
                        "{c:?} density {} in cell {i} is not positive",
                        x[i]
                    )));
                }
                u_new[k] = x;
                systems.push(system);
                applied.push(src);
            }

            let mut change = 0.0f64;
            let mut new_qf = [Vec::new(), Vec::new()];
            for c in Carrier::BOTH {
                let k = c.index();
                new_qf[k] = u_new[k]
                    .iter()
                    .zip(&phi)
                    .map(|(&v, &p)| Ok(c.quasi_fermi(stats.get(c).invert(v)?, p)))
                    .collect::<Result<_>>()?;
                change = change.max(max_abs_diff(&new_qf[k], &qf[k]));
            }

            if let Some(first) = converged_at {
                // Corrector pass done: this solve defines the step.
                let new_state = CarrierState::from_densities(t_new, phi, u_new, stats)?;
                let record = self.record(state, &new_state, dt, &systems, &applied, first, poisson_iterations)?;
                return Ok((new_state, record));
            }
            if change <= self.config.gummel_tol {
                converged_at = Some(sweep);
                qf = new_qf;
            } else if sweep >= max_sweeps {
                break;
            } else {
                let x: Vec<f64> = qf[0].iter().chain(&qf[1]).copied().collect();
                let g: Vec<f64> = new_qf[0].iter().chain(&new_qf[1]).copied().collect();
                let next = anderson.update(&x, &g);
                qf = [next[..n].to_vec(), next[n..].to_vec()];
            }
            if current_dependent {
                for (k, system) in systems.iter().enumerate() {
                    let faces: Vec<f64> = face_flows(mesh, &system.weights, &u_new[k])
                        .iter()
                        .map(|f| -f)
                        .collect();
                    j_cells[k] = cell_currents(&self.device, &faces);
                }
            }
        }
        Err(Error::StepRejected(format!(
            "Gummel iteration did not settle within {max_sweeps} sweeps"
        )))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        old: &CarrierState,
        new: &CarrierState,
        dt: f64,
        systems: &[ContinuitySystem],
        applied: &[Sources],
        gummel_iterations: usize,
        poisson_iterations: usize,
    ) -> Result<StepRecord> {
        let mesh = &self.device.mesh;
        let n = mesh.num_cells();
        let mut balance = [CarrierBalance::default(), CarrierBalance::default()];
        let mut flows = [Vec::new(), Vec::new()];
        let mut outflow_per_face = [vec![0.0; mesh.faces.len()], vec![0.0; mesh.faces.len()]];
        for c in Carrier::BOTH {
            let k = c.index();
            let (sys, src) = (&systems[k], &applied[k]);
            let u = &new.u[k];
            let b = &mut balance[k];
            let mut scale = 0.0;
            for i in 0..n {
                let v = mesh.cells[i].volume;
                b.storage += v * (u[i] - old.u[k][i]) / dt;
                scale += v * (u[i].abs() + old.u[k][i].abs()) / dt;
                let l = src.bulk[i];
                b.bulk += v * (l.gain - l.loss * u[i]);
                scale += v * (l.gain + l.loss * u[i]);
            }
            flows[k] = face_flows(mesh, &sys.weights, u);
            for (fi, face) in mesh.faces.iter().enumerate() {
                let w = &sys.weights[fi];
                scale += match face.kind {
                    FaceKind::Interior { left, right, .. } => 2.0 * (w.lo * u[left] + w.hi * u[right]),
                    FaceKind::Boundary { cell, .. } => w.lo.max(w.hi) * u[cell] + (w.lo + w.hi) * w.ghost,
                };
                if let FaceKind::Boundary {
                    side,
                    tag: BoundaryTag::Dirichlet(_),
                    ..
                } = face.kind
                {
                    let out = side.outward_sign() * flows[k][fi];
                    outflow_per_face[k][fi] = out;
                    b.outflow += out;
                }
            }
            for &(fi, l) in &src.surface {
                let cell = mesh.faces[fi].cells().0;
                let a = mesh.faces[fi].area;
                b.surface += a * (l.gain - l.loss * u[cell]);
                scale += a * (l.gain + l.loss * u[cell]);
            }
            for &(fi, l) in &src.interface {
                let (lc, rc) = mesh.faces[fi].cells();
                let rc = rc.expect("interior");
                let a = mesh.faces[fi].area;
                let rate = l.gain - l.loss * 0.5 * (u[lc] + u[rc]);
                b.interface += 0.5 * a * (l.gain - l.loss * u[lc]) + 0.5 * a * (l.gain - l.loss * u[rc]);
                b.interface_rates.push((fi, rate));
                scale += a * (l.gain + l.loss * 0.5 * (u[lc] + u[rc]));
            }
            b.scale = scale;
        }
        let contact_currents = mesh
            .contact_faces
            .iter()
            .map(|faces| {
                faces
                    .iter()
                    .map(|&fi| outflow_per_face[0][fi] - outflow_per_face[1][fi])
                    .sum()
            })
            .collect();
        Ok(StepRecord {
            t: new.t,
            dt,
            gummel_iterations,
            poisson_iterations,
            balance,
            contact_currents,
            flows,
        })
    }

    /// Marches from `initial` to `t_end` (or blow-up), calling `observer` on
    /// the initial state and after every accepted step.
    pub fn run(
        &self,
        initial: &InitialCondition,
        observer: &mut dyn FnMut(&CarrierState, Option<&StepRecord>),
    ) -> Result<RunOutcome> {
        self.run_from(self.initial_state(initial)?, observer)
    }

    pub fn run_from(
        &self,
        mut state: CarrierState,
        observer: &mut dyn FnMut(&CarrierState, Option<&StepRecord>),
    ) -> Result<RunOutcome> {
        let cfg = &self.config;
        observer(&state, None);
        let mut history = vec![(state.t, proxy_norm(&self.device, &state, &self.dirichlet(state.t)?))];
        let mut records = Vec::new();
        let mut dt = cfg.dt;
        let mut rejected = 0;
        let t_end = cfg.t_end;
        let eps = 1e-12 * t_end.max(1.0);
        let mut blowup = detect_blowup(&history, cfg);
        let mut error = None;
        while state.t < t_end - eps && records.len() < cfg.max_steps {
            let step = dt.min(t_end - state.t);
            match self.gummel_step(&state, step) {
                Ok((next, record)) => {
                    state = next;
                    observer(&state, Some(&record));
                    history.push((state.t, proxy_norm(&self.device, &state, &self.dirichlet(state.t)?)));
                    records.push(record);
                    blowup = detect_blowup(&history, cfg);
                    if blowup.detected {
                        break;
                    }
                    if cfg.adaptive {
                        dt = (dt * 1.2).min(cfg.dt_max);
                    }
                }
                Err(Error::StepRejected(msg)) => {
                    rejected += 1;
                    dt *= 0.5;
                    if dt < cfg.dt_min {
                        blowup = step_size_collapse(&history, state.t);
                        error = Some(Error::StepRejected(msg));
                        break;
                    }
                }
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
        }
        Ok(RunOutcome {
            final_state: state,
            records,
            blowup,
            rejected_steps: rejected,
            error,
        })
    }
}

const ANDERSON_DEPTH: usize = 8;

/// Anderson acceleration of the fixed-point map `x ↦ g(x)`.
struct Anderson {
    depth: usize,
    last: Option<(Vec<f64>, Vec<f64>)>,
    /// Differences of residuals `f = g − x` and of map values `g`.
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            last: None,
            df: Vec::new(),
            dg: Vec::new(),
        }
    }

    fn update(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let f = sub(g, x);
        if let Some((f_prev, g_prev)) = self.last.take() {
            self.df.push(sub(&f, &f_prev));
            self.dg.push(sub(g, &g_prev));
            if self.df.len() > self.depth {
                self.df.remove(0);
                self.dg.remove(0);
            }
        }
        self.last = Some((f.clone(), g.to_vec()));
        if self.df.is_empty() {
            return g.to_vec();
        }
        match least_squares(&self.df, &f) {
            Some(gamma) => {
                let mut next = g.to_vec();
                for (c, dg) in gamma.iter().zip(&self.dg) {
                    next.iter_mut().zip(dg).for_each(|(x, d)| *x -= c * d);
                }
                next
            }
            None => {
                self.df.clear();
                self.dg.clear();
                g.to_vec()
            }
        }
    }
}

/// `argmin ‖f − Σ γ_i a_i‖` by modified Gram–Schmidt; `None` when the
/// columns are numerically dependent.
fn least_squares(cols: &[Vec<f64>], f: &[f64]) -> Option<Vec<f64>> {
    let m = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];
    for (j, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        let norm0 = crate::sparse::norm2(&v);
        for (i, qi) in q.iter().enumerate() {
            let d: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
            r[i][j] = d;
            v.iter_mut().zip(qi).for_each(|(v, q)| *v -= d * q);
        }
        let nv = crate::sparse::norm2(&v);
        if !(nv > 1e-10 * norm0) {
            return None;
        }
        r[j][j] = nv;
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    let qtf: Vec<f64> = q.iter().map(|qi| qi.iter().zip(f).map(|(a, b)| a * b).sum()).collect();
    let mut gamma = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| r[i][j] * gamma[j]).sum();
        gamma[i] = (qtf[i] - s) / r[i][i];
    }
    Some(gamma)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Free-function form of [`Simulator::split_data`].
pub fn split_data(sim: &Simulator, t: f64) -> Result<SplitData> {
    sim.split_data(t)
}

/// Free-function form of [`Simulator::gummel_step`].
pub fn gummel_step(sim: &Simulator, state: &CarrierState, dt: f64) -> Result<(CarrierState, StepRecord)> {
    sim.gummel_step(state, dt)
}

/// Free-function form of [`Simulator::compute_currents`].
pub fn compute_currents(sim: &Simulator, state: &CarrierState) -> Result<Currents> {
    sim.compute_currents(state, &sim.dirichlet(state.t)?)
}

/// Runs without an observer.
pub fn run(sim: &Simulator, initial: &InitialCondition) -> Result<RunOutcome> {
    sim.run(initial, &mut |_, _| {})
}
