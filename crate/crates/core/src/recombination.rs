//! Bulk, boundary and interfacial recombination/generation rates.
//!
//! Every model returns its expression in the customary form: SRH, Auger and
//! surface SRH give the *net recombination* rate (positive when
//! `u₁u₂ > n_i²`), mass action and Avalanche give *production*. The time
//! stepper converts everything to the production term on the right-hand side
//! of the continuity equations through [`BulkRecombination::linearize`] and
//! [`SurfaceRecombination::linearize`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statistics::Carrier;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Impact-ionization kernel `|j| exp(−a / |e·j/|j||)`, extended by zero
/// where `e·j = 0`.
pub fn kappa(e: &[f64], j: &[f64], a: f64) -> f64 {
    let jn = norm(j);
    if jn == 0.0 {
        return 0.0;
    }
    let proj = dot(e, j);
    if proj == 0.0 {
        return 0.0;
    }
    // exp(−a/t) underflows to zero long before t reaches subnormal range.
    jn * (-a / (proj / jn).abs()).exp()
}

/// Lipschitz constant of `t ↦ exp(−a/t)` on `[0, ∞)`.
pub fn lipschitz_constant(a: f64) -> f64 {
    4.0 / (std::f64::consts::E * std::f64::consts::E * a)
}

/// Pointwise Lipschitz modulus of [`kappa`]:
/// `|κ(e₁,j₁) − κ(e₂,j₂)| ≤ (2 L_a |e₁| + 1) |j₁ − j₂| + L_a |j₂| |e₁ − e₂|`.
pub fn kappa_lipschitz_bound(a: f64, norm_e1: f64, norm_j2: f64, norm_dj: f64, norm_de: f64) -> f64 {
    let la = lipschitz_constant(a);
    (2.0 * la * norm_e1 + 1.0) * norm_dj + la * norm_j2 * norm_de
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BulkRecombination {
    /// `r̂ (g − exp(Φ₁ + Φ₂))`, production.
    MassAction { rate: f64, g: f64 },
    /// Shockley–Read–Hall net recombination.
    Srh {
        n_i: f64,
        n1: f64,
        n2: f64,
        tau1: f64,
        tau2: f64,
    },
    /// Auger net recombination.
    Auger { n_i: f64, c1: f64, c2: f64 },
    /// Impact ionization, generation only.
    Avalanche { a_n: f64, a_p: f64, c_n: f64, c_p: f64 },
}

/// Carrier production linearized in the density of one carrier:
/// `production ≈ gain − loss · u_k` with `gain, loss ≥ 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Linearized {
    pub gain: f64,
    pub loss: f64,
}

impl std::ops::AddAssign for Linearized {
    fn add_assign(&mut self, rhs: Self) {
        self.gain += rhs.gain;
        self.loss += rhs.loss;
    }
}

/// Local quantities a bulk model may depend on.
#[derive(Debug, Clone, Copy)]
pub struct BulkInputs<'a> {
    pub u: [f64; 2],
    pub grad_phi: &'a [f64],
    pub j1: &'a [f64],
    pub j2: &'a [f64],
    pub quasi_fermi: [f64; 2],
}

fn check_density(u: [f64; 2]) -> Result<()> {
    if u.iter().all(|&x| x >= 0.0 && x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("densities must be nonnegative, got {u:?}")))
    }
}

impl BulkRecombination {
    /// Parameter check; `None` when admissible.
    pub fn check(&self) -> Option<String> {
        let positive = |name: &str, vals: &[f64]| {
            vals.iter()
                .all(|&v| v > 0.0 && v.is_finite())
                .then_some(())
                .ok_or(format!("{name} parameters must be positive and finite"))
        };
        let r = match self {
            BulkRecombination::MassAction { rate, g } => {
                if *rate >= 0.0 && *g >= 0.0 && rate.is_finite() && g.is_finite() {
                    Ok(())
                } else {
                    Err("mass-action rate and g must be nonnegative".to_string())
                }
            }
            BulkRecombination::Srh {
                n_i,
                n1,
                n2,
                tau1,
                tau2,
            } => positive("SRH", &[*n1, *n2, *tau1, *tau2]).and_then(|_| positive("SRH", &[*n_i])),
            BulkRecombination::Auger { n_i, c1, c2 } => positive("Auger", &[*n_i, *c1, *c2]),
            BulkRecombination::Avalanche { a_n, a_p, c_n, c_p } => {
                positive("Avalanche", &[*a_n, *a_p]).and_then(|_| {
                    if *c_n >= 0.0 && *c_p >= 0.0 {
                        Ok(())
                    } else {
                        Err("Avalanche prefactors must be nonnegative".into())
                    }
                })
            }
        };
        r.err()
    }

    /// Whether the model depends on fields and currents.
    pub fn is_current_dependent(&self) -> bool {
        matches!(self, BulkRecombination::Avalanche { .. })
    }

    /// The rate in its customary sign (see module docs).
    pub fn eval(&self, x: &BulkInputs<'_>) -> Result<f64> {
        check_density(x.u)?;
        let [u1, u2] = x.u;
        Ok(match *self {
            BulkRecombination::MassAction { rate, g } => rate * (g - (x.quasi_fermi[0] + x.quasi_fermi[1]).exp()),
            BulkRecombination::Srh {
                n_i,
                n1,
                n2,
                tau1,
                tau2,
            } => (u1 * u2 - n_i * n_i) / (tau2 * (u1 + n1) + tau1 * (u2 + n2)),
            BulkRecombination::Auger { n_i, c1, c2 } => (u1 * u2 - n_i * n_i) * (c1 * u1 + c2 * u2),
            BulkRecombination::Avalanche { a_n, a_p, c_n, c_p } => {
                c_n * kappa(x.grad_phi, x.j1, a_n) + c_p * kappa(x.grad_phi, x.j2, a_p)
            }
        })
    }

    /// Carrier production `r^Ω` contributed by this model.
    pub fn production(&self, x: &BulkInputs<'_>) -> Result<f64> {
        let r = self.eval(x)?;
        Ok(match self {
            BulkRecombination::Srh { .. } | BulkRecombination::Auger { .. } => -r,
            _ => r,
        })
    }

    /// Production linearized in `u_k` around the frozen state `x`; the gain
    /// and loss parts are nonnegative so that implicit treatment of the loss
    /// keeps the continuity matrix an M-matrix.
    pub fn linearize(&self, carrier: Carrier, x: &BulkInputs<'_>) -> Result<Linearized> {
        check_density(x.u)?;
        let k = carrier.index();
        let other = x.u[1 - k];
        Ok(match *self {
            BulkRecombination::MassAction { rate, g } => {
                let sink = rate * (x.quasi_fermi[0] + x.quasi_fermi[1]).exp();
                Linearized {
                    gain: rate * g,
                    loss: if x.u[k] > 0.0 { sink / x.u[k] } else { 0.0 },
                }
            }
            BulkRecombination::Srh {
                n_i,
                n1,
                n2,
                tau1,
                tau2,
            } => {
                let den = tau2 * (x.u[0] + n1) + tau1 * (x.u[1] + n2);
                Linearized {
                    gain: n_i * n_i / den,
                    loss: other / den,
                }
            }
            BulkRecombination::Auger { n_i, c1, c2 } => {
                let a = c1 * x.u[0] + c2 * x.u[1];
                Linearized {
                    gain: n_i * n_i * a,
                    loss: other * a,
                }
            }
            BulkRecombination::Avalanche { .. } => Linearized {
                gain: self.eval(x)?,
                loss: 0.0,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SurfaceRecombination {
    Zero,
    /// `(u₁u₂ − n_i²) / (v₂(u₁ + n₁) + v₁(u₂ + n₂))`, net recombination per area.
    SurfaceSrh {
        n_i: f64,
        n1: f64,
        n2: f64,
        v1: f64,
        v2: f64,
    },
}

impl SurfaceRecombination {
    pub fn check(&self) -> Option<String> {
        match self {
            SurfaceRecombination::Zero => None,
            SurfaceRecombination::SurfaceSrh { n_i, n1, n2, v1, v2 } => {
                if [*n_i, *n1, *n2, *v1, *v2].iter().all(|&v| v > 0.0 && v.is_finite()) {
                    None
                } else {
                    Some("surface SRH parameters must be positive and finite".into())
                }
            }
        }
    }

    pub fn eval(&self, u: [f64; 2]) -> Result<f64> {
        check_density(u)?;
        Ok(match *self {
            SurfaceRecombination::Zero => 0.0,
            SurfaceRecombination::SurfaceSrh { n_i, n1, n2, v1, v2 } => {
                (u[0] * u[1] - n_i * n_i) / (v2 * (u[0] + n1) + v1 * (u[1] + n2))
            }
        })
    }

    /// Production per area, linearized in `u_k`.
    pub fn linearize(&self, carrier: Carrier, u: [f64; 2]) -> Result<Linearized> {
        check_density(u)?;
        let other = u[1 - carrier.index()];
        Ok(match *self {
            SurfaceRecombination::Zero => Linearized::default(),
            SurfaceRecombination::SurfaceSrh { n_i, n1, n2, v1, v2 } => {
                let den = v2 * (u[0] + n1) + v1 * (u[1] + n2);
                Linearized {
                    gain: n_i * n_i / den,
                    loss: other / den,
                }
            }
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SurfaceRecombination::Zero)
    }
}
