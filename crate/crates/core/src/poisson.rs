//! The nonlinear Poisson problem `P φ̃ = F₁(ω₁ − φ̃) − F₂(ω₂ + φ̃) + b` and its
//! solution operator `S(ω) = φ̃`.
//!
//! Two solvers are provided: damped Newton, and a fixed-point iteration for
//! the cut-off operator `𝒫_ω^K(φ) = Pφ − F₁(ω₁ − ϖ(φ)) + F₂(ω₂ + ϖ(φ)) − b`,
//! which is Lipschitz and strongly monotone in the energy norm of `P`.

use crate::device::Device;
use crate::error::{Error, Result};
use crate::operators::{
    self, assemble_poisson, neutral_potential, poisson_load, ContactValue, DirichletData, SparseOperator,
};
use crate::sparse::{norm2, Factorization};
use crate::statistics::StatisticsPair;

pub const NEWTON_TOL: f64 = 1e-12;
pub const CONTRACTION_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 1000;

/// The clamp `ϖ(s)` of `s` to `[−K, K]`.
pub fn cutoff(s: f64, k: f64) -> f64 {
    s.clamp(-k, k)
}

/// `K = ‖ω‖_∞ + K₀`, `K₀ = max(|k₁|, |k₂|)` for the zero pair
/// `k = (0, F₂⁻¹(F₁(0)))` of `S`.
pub fn apriori_bound(omega: &[Vec<f64>; 2], stats: &StatisticsPair) -> Result<f64> {
    let m = omega.iter().flat_map(|w| w.iter()).fold(0.0f64, |m, w| m.max(w.abs()));
    Ok(m + zero_pair(stats)?[1].abs())
}

/// The pair `k = (0, F₂⁻¹(F₁(0)))` with `S(k) = 0`.
pub fn zero_pair(stats: &StatisticsPair) -> Result<[f64; 2]> {
    if stats.electrons == stats.holes {
        return Ok([0.0, 0.0]);
    }
    Ok([0.0, stats.holes.invert(stats.electrons.eval(0.0)?)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Contraction,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Dual-norm residual `‖P^{-1/2} r‖` relative to `max(1, source scale)`.
    pub residual: f64,
    pub method: Method,
    pub bound: f64,
    /// Per-iteration step norms (energy norm for contraction, `‖·‖∞` for
    /// Newton).
    pub history: Vec<f64>,
}

/// Preconditioner of the contraction iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// `M = P` with fixed relaxation; `None` selects `λ = m/L²`.
    Riesz { relaxation: Option<f64> },
    /// `M = P + diag(V(F₁′ + F₂′))` frozen at an iterate and refreshed when
    /// the observed contraction rate deteriorates.
    Linearized,
}

#[derive(Debug, Clone)]
pub struct NonlinearPoissonProblem {
    pub operator: SparseOperator,
    factor: Factorization,
    pub volumes: Vec<f64>,
    /// Additional cell-integrated load `b`.
    pub load: Vec<f64>,
    pub stats: StatisticsPair,
    pub omega: [Vec<f64>; 2],
    /// Replaces [`apriori_bound`] when set (must not be smaller).
    pub bound: Option<f64>,
}

impl NonlinearPoissonProblem {
    pub fn new(
        operator: SparseOperator,
        volumes: Vec<f64>,
        stats: StatisticsPair,
        omega: [Vec<f64>; 2],
    ) -> Result<Self> {
        let n = operator.dim();
        if volumes.len() != n || omega.iter().any(|w| w.len() != n) {
            return Err(Error::Index("field lengths do not match the operator".into()));
        }
        if omega.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Domain("ω must be finite".into()));
        }
        Ok(Self {
            factor: operator.factor()?,
            operator,
            volumes,
            load: vec![0.0; n],
            stats,
            omega,
            bound: None,
        })
    }

    pub fn with_omega(&self, omega: [Vec<f64>; 2]) -> Self {
        Self {
            omega,
            bound: None,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn cutoff_bound(&self) -> Result<f64> {
        let k = apriori_bound(&self.omega, &self.stats)?;
        Ok(self.bound.map_or(k, |b| b.max(k)))
    }

    /// Cell-integrated `V(F₁(ω₁ − φ) − F₂(ω₂ + φ))`, its derivative w.r.t.
    /// `−φ` (i.e. `V(F₁′ + F₂′)`) and the scale `V(F₁ + F₂)`.
    fn source(&self, phi: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let (mut f, mut df, mut scale) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (f1, d1) = self.stats.electrons.eval_with_derivative(self.omega[0][i] - phi[i])?;
            let (f2, d2) = self.stats.holes.eval_with_derivative(self.omega[1][i] + phi[i])?;
            let v = self.volumes[i];
            f[i] = v * (f1 - f2);
            df[i] = v * (d1 + d2);
            scale[i] = v * (f1 + f2);
        }
        Ok((f, df, scale))
    }

    /// `Pφ − V(F₁(ω₁ − φ) − F₂(ω₂ + φ)) − b` and the source scale.
    fn residual(&self, phi: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (f, df, scale) = self.source(phi)?;
        let p = self.operator.apply(phi);
        let r = (0..self.dim()).map(|i| p[i] - f[i] - self.load[i]).collect();
        Ok((r, df, scale))
    }

    fn dual_norm(&self, r: &[f64]) -> Result<f64> {
        let y = self.factor.solve(r)?;
        Ok(r.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    }

    /// Scaled dual-norm residual of the uncut equation at `phi`.
    pub fn residual_norm(&self, phi: &[f64]) -> Result<f64> {
        let (r, _, scale) = self.residual(phi)?;
        let s = self.dual_norm(&scale)?.max(norm2(&self.load)).max(1.0);
        Ok(self.dual_norm(&r)? / s)
    }
}

fn energy_norm(op: &SparseOperator, x: &[f64]) -> f64 {
    op.apply(x)
        .iter()
        .zip(x)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

fn smallest_eigenvalue(factor: &Factorization, n: usize) -> Result<f64> {
    // Inverse iteration; the Rayleigh quotient bounds λ_min from above, so
    // a safety factor is applied by the caller.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
    let mut lambda = f64::INFINITY;
    for _ in 0..50 {
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let y = factor.solve(&x)?;
        let ny = norm2(&y);
        let next = 1.0 / ny;
        x = y;
        if (next - lambda).abs() <= 1e-6 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

/// Zarantonello iteration `φ ← φ − λ M⁻¹ 𝒫_ω^K(φ)` started from zero.
pub fn contraction_iterate(
    problem: &NonlinearPoissonProblem,
    metric: Metric,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = problem.dim();
    let k = problem.cutoff_bound()?;
    let cut = |phi: &[f64]| phi.iter().map(|&p| cutoff(p, k)).collect::<Vec<_>>();
    let mut phi = vec![0.0; n];
    let mut history = Vec::new();

    let cut_residual = |phi: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (f, df, _) = problem.source(&cut(phi))?;
        let p = problem.operator.apply(phi);
        Ok(((0..n).map(|i| p[i] - f[i] - problem.load[i]).collect(), df))
    };

    let (mut lambda, mut metric_op, mut factor) = match metric {
        Metric::Riesz { relaxation } => {
            let lambda = match relaxation {
                Some(l) => l,
                None => {
                    // Lipschitz modulus of 𝒫 in the energy norm, with m = 1.
                    let sup_df = sup_derivative(problem, k)?;
                    let vmax = problem.volumes.iter().cloned().fold(0.0, f64::max);
                    let lmin = 0.9 * smallest_eigenvalue(&problem.factor, n)?;
                    let l = 1.0 + sup_df * vmax / lmin;
                    1.0 / (l * l)
                }
            };
            (lambda, problem.operator.clone(), problem.factor.clone())
        }
        Metric::Linearized => {
            let (_, df) = cut_residual(&phi)?;
            let m = problem.operator.shifted(&df);
            let f = m.factor()?;
            (1.0, m, f)
        }
    };

    let mut last_step = f64::INFINITY;
    for it in 1..=max_iter {
        let (r, df) = cut_residual(&phi)?;
        let mut delta = factor.solve(&r)?;
        delta.iter_mut().for_each(|d| *d *= lambda);
        let step = energy_norm(&metric_op, &delta);
        for (p, d) in phi.iter_mut().zip(&delta) {
            *p -= d;
        }
        history.push(step);
        if !step.is_finite() {
            break;
        }
        if step <= tol {
            let residual = problem.residual_norm(&phi)?;
            if residual <= 10.0 * tol || step == 0.0 {
                return Ok((
                    phi,
                    SolveReport {
                        iterations: it,
                        residual,
                        method: Method::Contraction,
                        bound: k,
                        history,
                    },
                ));
            }
        }
        if matches!(metric, Metric::Linearized) && step > 0.25 * last_step {
            if step >= last_step {
                lambda = (0.5 * lambda).max(1e-3);
            }
            metric_op = problem.operator.shifted(&df);
            factor = metric_op.factor()?;
        }
        last_step = step;
    }
    let rate = if history.len() >= 2 {
        history[history.len() - 1] / history[history.len() - 2]
    } else {
        f64::NAN
    };
    Err(Error::NonConvergence {
        method: "contraction",
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        rate,
    })
}

fn sup_derivative(problem: &NonlinearPoissonProblem, k: f64) -> Result<f64> {
    // F′ is increasing, so the supremum over |ω| + K is attained at the top.
    let m = problem.omega.iter().flatten().fold(0.0f64, |m, w| m.max(w.abs()));
    Ok(problem.stats.electrons.eval_derivative(m + k)? + problem.stats.holes.eval_derivative(m + k)?)
}

/// Damped Newton on the uncut equation, iterates clamped to `[−K, K]`.
pub fn newton_solve(problem: &NonlinearPoissonProblem, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    newton_from(problem, vec![0.0; problem.dim()], tol, max_iter)
}

pub fn newton_from(
    problem: &NonlinearPoissonProblem,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let k = problem.cutoff_bound()?;
    let mut phi: Vec<f64> = start.into_iter().map(|p| cutoff(p, k)).collect();
    let mut history = Vec::new();
    let (mut r, mut df, _) = problem.residual(&phi)?;
    let mut rnorm = norm2(&r);
    for it in 0..=max_iter {
        let residual = problem.residual_norm(&phi)?;
        if residual <= tol {
            return Ok((
                phi,
                SolveReport {
                    iterations: it,
                    residual,
                    method: Method::Newton,
                    bound: k,
                    history,
                },
            ));
        }
        if it == max_iter {
            break;
        }
        let jac = problem.operator.shifted(&df);
        let delta = operators::solve_linear(&jac, &r)?;
        let dmax = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let pmax = phi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = phi.iter().zip(&delta).map(|(p, d)| cutoff(p - alpha * d, k)).collect();
            let (rt, dft, _) = problem.residual(&trial)?;
            let tn = norm2(&rt);
            if tn < rnorm || (tn <= rnorm && alpha == 1.0) {
                phi = trial;
                r = rt;
                df = dft;
                rnorm = tn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        history.push(alpha * dmax);
        if !accepted || dmax <= 4.0 * f64::EPSILON * (1.0 + pmax) {
            // No further decrease possible: accept at rounding level.
            let residual = problem.residual_norm(&phi)?;
            if residual <= 1e3 * tol.max(f64::EPSILON) {
                return Ok((
                    phi,
                    SolveReport {
                        iterations: it + 1,
                        residual,
                        method: Method::Newton,
                        bound: k,
                        history,
                    },
                ));
            }
            return Err(Error::NonConvergence {
                method: "newton",
                iterations: it + 1,
                residual,
                rate: f64::NAN,
            });
        }
    }
    Err(Error::NonConvergence {
        method: "newton",
        iterations: max_iter,
        residual: problem.residual_norm(&phi)?,
        rate: f64::NAN,
    })
}

/// `S(ω)`: Newton, falling back to the contraction iteration.
pub fn solve_operator_s(problem: &NonlinearPoissonProblem) -> Result<(Vec<f64>, SolveReport)> {
    solve_operator_s_from(problem, None)
}

/// As [`solve_operator_s`], with a starting guess for Newton.
pub fn solve_operator_s_from(
    problem: &NonlinearPoissonProblem,
    start: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = start.map_or_else(|| vec![0.0; problem.dim()], |s| s.to_vec());
    // Far from the root Newton advances about one unit per step.
    match newton_from(problem, start, NEWTON_TOL, NEWTON_MAX_ITER) {
        Ok(r) => Ok(r),
        Err(newton_err) => contraction_iterate(problem, Metric::Linearized, CONTRACTION_TOL, 10_000).map_err(|e| {
            Error::NonConvergence {
                method: "newton+contraction",
                iterations: match e {
                    Error::NonConvergence { iterations, .. } => iterations,
                    _ => 0,
                },
                residual: match newton_err {
                    Error::NonConvergence { residual, .. } => residual,
                    _ => f64::NAN,
                },
                rate: f64::NAN,
            }
        }),
    }
}

/// Contact data of thermal equilibrium: zero quasi-Fermi levels, ohmic
/// contacts at their neutral potential.
pub fn equilibrium_dirichlet(device: &Device, stats: &StatisticsPair) -> Result<DirichletData> {
    let mesh = &device.mesh;
    let mut faces = vec![None; mesh.faces.len()];
    for (ci, contact) in device.spec.boundary.contacts.iter().enumerate() {
        for &fi in &mesh.contact_faces[ci] {
            let cell = mesh.faces[fi].cells().0;
            let phi = match &contact.phi {
                Some(p) if contact.bias.is_none() => p.at(0.0),
                _ => neutral_potential(stats, mesh.doping[cell], [0.0, 0.0])?,
            };
            faces[fi] = Some(ContactValue {
                phi,
                quasi_fermi: [0.0, 0.0],
            });
        }
    }
    Ok(DirichletData { faces })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub phi: Vec<f64>,
    pub u: [Vec<f64>; 2],
    pub report: SolveReport,
}

/// Self-consistent potential and densities at `Φ₁ = Φ₂ = 0`.
pub fn equilibrium_state(device: &Device, stats: &StatisticsPair) -> Result<Equilibrium> {
    let op = assemble_poisson(device)?;
    let dirichlet = equilibrium_dirichlet(device, stats)?;
    let load = poisson_load(device, &op, &dirichlet, 0.0)?;
    let phi_d = op.factor()?.solve(&load)?;
    let omega = [phi_d.iter().map(|p| -p).collect(), phi_d.clone()];
    let problem = NonlinearPoissonProblem::new(op, device.mesh.volumes(), *stats, omega)?;
    let (tilde, report) = solve_operator_s(&problem)?;
    let phi: Vec<f64> = phi_d.iter().zip(&tilde).map(|(a, b)| a + b).collect();
    let u1 = phi
        .iter()
        .map(|&p| stats.electrons.eval(-p))
        .collect::<Result<Vec<_>>>()?;
    let u2 = phi.iter().map(|&p| stats.holes.eval(p)).collect::<Result<Vec<_>>>()?;
    Ok(Equilibrium {
        phi,
        u: [u1, u2],
        report,
    })
}
